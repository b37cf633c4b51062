"""
SmartCrowd - Virtual Workers
Clustering, C-DEX+ design over virtual workers, round-robin disintegration and maintenance
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from crowd_model import (
    AssignmentState, ConstraintConfig, Event, ObjectiveWeights, SmartCrowdError,
    UnknownWorkerError, VirtualWorker, Workload, as_roster, roster_after,
)
from cdex_solver import BooleanProgram, ProgramVariable, solve, task_term
from task_value import refresh_indexes, value_from_aggregates

logger = logging.getLogger(__name__)

PROFILE_SPACES = ("expected", "raw")


class CapacityError(SmartCrowdError):
    """A virtual multiplicity that the cluster members cannot absorb."""


def profile_vector(profile, space: str = "expected") -> np.ndarray:
    """Point a worker occupies for clustering: p-scaled skills and wage, or the raw profile."""
    skills = np.asarray(profile.skills, dtype=float)
    if space == "expected":
        p = profile.acceptance_ratio
        return np.concatenate([p * skills, [p * profile.wage]])
    if space == "raw":
        return np.concatenate([skills, [profile.wage, profile.acceptance_ratio]])
    raise ValueError(f"unknown profile space {space!r}, expected one of {PROFILE_SPACES}")


def pairwise_distances(profiles: list, space: str = "expected") -> np.ndarray:
    if not profiles:
        return np.zeros((0, 0))
    points = np.array([profile_vector(w, space) for w in profiles])
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=2))


def alpha_from_percentile(workers, percentile: float, space: str = "expected") -> float:
    """The given percentile of all pairwise profile distances."""
    profiles = list(as_roster(workers).values())
    if len(profiles) < 2:
        return 0.0
    d = pairwise_distances(profiles, space)
    upper = d[np.triu_indices(len(profiles), k=1)]
    return float(np.percentile(upper, percentile))


def make_virtual(vid: int, members: Iterable, roster, constraints: ConstraintConfig) -> VirtualWorker:
    members = tuple(sorted(members))
    if not members:
        raise ValueError("a virtual worker needs at least one member")
    expected = np.array([roster[u].acceptance_ratio * np.asarray(roster[u].skills, dtype=float) for u in members])
    wages = [roster[u].expected_wage for u in members]
    return VirtualWorker(
        id=vid,
        skills=tuple(expected.min(axis=0).tolist()),
        wage=float(max(wages)),
        members=members,
        capacity_max=len(members) * constraints.x_h,
        capacity_min=len(members) * constraints.x_l,
    )


def _partition(profiles: list, alpha: float, space: str) -> list:
    """Complete-linkage admission in id order: join the first group within alpha of every member."""
    d = pairwise_distances(profiles, space)
    groups = []
    for i in range(len(profiles)):
        for group in groups:
            if all(d[i, j] <= alpha + 1e-12 for j in group):
                group.append(i)
                break
        else:
            groups.append([i])
    return [[profiles[i].id for i in group] for group in groups]


def cluster_workers(workers, alpha: float, constraints: ConstraintConfig = ConstraintConfig(),
                    space: str = "expected", first_id: int = 0) -> list:
    """Partition workers into virtual workers whose members are pairwise within alpha."""
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    roster = as_roster(workers)
    groups = _partition(list(roster.values()), alpha, space)
    clusters = [make_virtual(first_id + i, g, roster, constraints) for i, g in enumerate(groups)]
    logger.info(f"Clustered {len(roster)} workers into {len(clusters)} virtual workers (alpha={alpha:.4f})")
    return clusters


def cluster_add_workers(clusters: list, new_workers, alpha: float, constraints: ConstraintConfig = ConstraintConfig(),
                        space: str = "expected") -> list:
    """New workers cluster only among themselves; existing clusters stay as they are."""
    new_roster = as_roster(new_workers)
    if not new_roster:
        return list(clusters)
    first_id = max((v.id for v in clusters), default=-1) + 1
    return list(clusters) + cluster_workers(new_roster, alpha, constraints, space, first_id)


def cluster_remove_or_update(clusters: list, affected: Iterable, workers, alpha: float,
                             constraints: ConstraintConfig = ConstraintConfig(), space: str = "expected") -> list:
    """
    Dissolve every cluster holding an affected worker and re-cluster its
    surviving members among themselves.

    Args:
        affected: removed or updated worker ids
        workers: roster after the change (removed workers absent, updated ones with new profiles)
    """
    affected = set(affected)
    roster = as_roster(workers)
    kept, loose = [], []
    for v in clusters:
        if affected.intersection(v.members):
            loose.extend(u for u in v.members if u in roster)
        else:
            kept.append(v)
    if not loose:
        return kept
    first_id = max((v.id for v in clusters), default=-1) + 1
    return kept + cluster_workers({u: roster[u] for u in loose}, alpha, constraints, space, first_id)


def clusters_to_csv(clusters: list, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["virtual_id", "members", "skills", "wage", "capacity_max", "capacity_min"])
        for v in clusters:
            writer.writerow([v.id, " ".join(map(str, v.members)), ";".join(f"{s:.6g}" for s in v.skills),
                             f"{v.wage:.6g}", v.capacity_max, v.capacity_min])


# ============================================================
# C-DEX+ design
# ============================================================

@dataclass
class VirtualAssignment:
    """Units of each virtual worker per task."""
    multiplicity: dict = field(default_factory=dict)
    objective: float = 0.0

    def units(self, task_id: int) -> dict:
        return {vid: k for (vid, t), k in sorted(self.multiplicity.items()) if t == task_id and k}

    def to_dict(self) -> dict:
        return {"objective": self.objective,
                "multiplicity": [{"virtual_id": v, "task_id": t, "units": k}
                                 for (v, t), k in sorted(self.multiplicity.items()) if k]}


def virtual_aggregates(units: dict, clusters) -> tuple:
    by_id = {v.id: v for v in clusters}
    m = len(next(iter(by_id.values())).skills) if by_id else 0
    quality = np.zeros(m)
    cost = 0.0
    for vid, k in units.items():
        quality += k * np.asarray(by_id[vid].skills)
        cost += k * by_id[vid].wage
    return tuple(quality.tolist()), cost


def virtual_task_value(units: dict, task, clusters, weights: ObjectiveWeights):
    quality, cost = virtual_aggregates(units, clusters)
    return value_from_aggregates(quality, cost, task, weights, empty=not any(units.values()))


def build_virtual_program(clusters: list, workload: Workload, constraints: ConstraintConfig,
                          weights: ObjectiveWeights, kind: str = "virtual design", task_ids=None,
                          caps: Optional[dict] = None, owner_bounds: Optional[dict] = None,
                          base_state: Optional[AssignmentState] = None, roster=None) -> BooleanProgram:
    """
    Program over |N| x |T| multiplicity variables.

    Each (V, t) variable ranges over 0..n' unless caps narrows it; each V's
    total lies in [n'X_l, n'X_h] unless owner_bounds overrides it. Task base
    aggregates come from the true profiles of base_state's workers. An explicit
    task_ids list marks a marginal program targeting those tasks.
    """
    targets = [] if task_ids is None else list(task_ids)
    task_ids = workload.task_ids if task_ids is None else list(task_ids)
    roster = roster or {}
    caps = caps or {}
    variables = []
    for v in sorted(clusters, key=lambda v: v.id):
        for t in task_ids:
            upper = caps.get((v.id, t), v.size)
            if upper <= 0:
                continue
            variables.append(ProgramVariable(owner=v.id, task=t, quality=tuple(v.skills), cost=v.wage, upper=upper))
    owners = sorted({var.owner for var in variables})
    if owner_bounds is None:
        by_id = {v.id: v for v in clusters}
        owner_bounds = {o: (by_id[o].capacity_min, by_id[o].capacity_max) for o in owners}
    else:
        owner_bounds = {o: owner_bounds[o] for o in owners}
    base_state = base_state or AssignmentState.empty((), workload.task_ids)
    tasks = {t.id: task_term(t, base_state.workers_of(t.id), roster) for t in workload}
    return BooleanProgram(
        kind=kind,
        variables=variables,
        tasks=tasks,
        owner_bounds=owner_bounds,
        owner_base={o: 0 for o in owners},
        weights=weights,
        base_state=base_state,
        roster=roster,
        var_prefix="v",
        target_tasks=targets,
    )


def design_cdex_plus(clusters: list, workload: Workload, constraints: ConstraintConfig, weights: ObjectiveWeights,
                     budget: Optional[int] = None, time_limit: Optional[float] = None) -> tuple:
    """Exact C-DEX+ design; returns (VirtualAssignment, SolveResult)."""
    program = build_virtual_program(clusters, workload, constraints, weights)
    logger.info(f"C-DEX+ program: {len(clusters)} virtual workers x {len(workload)} tasks = "
                f"{program.variable_count} variables")
    result = solve(program, budget=budget, time_limit=time_limit)
    return VirtualAssignment(multiplicity=result.chosen(program), objective=result.objective), result


def disintegrate(assignment: VirtualAssignment, clusters: list, constraints: ConstraintConfig,
                 state: Optional[AssignmentState] = None, cursors: Optional[dict] = None,
                 allowed: Optional[Iterable] = None, strict: bool = True) -> AssignmentState:
    """
    Hand each virtual unit to an actual member, round robin over the member
    list, tasks in id order and virtual workers in id order.

    Members already on the task, at X_h, unavailable, or outside `allowed` are
    skipped. cursors (virtual id -> next member position) is updated in place
    so successive calls keep rotating.
    """
    by_id = {v.id: v for v in clusters}
    state = state.copy() if state is not None else AssignmentState.empty(
        [u for v in clusters for u in v.members], sorted({t for _, t in assignment.multiplicity}))
    cursors = cursors if cursors is not None else {}
    allowed = None if allowed is None else set(allowed)

    for (vid, t), units in sorted(assignment.multiplicity.items(), key=lambda item: (item[0][1], item[0][0])):
        if units <= 0:
            continue
        v = by_id[vid]
        size = v.size
        for _ in range(units):
            placed = False
            start = cursors.get(vid, 0)
            for step in range(size):
                pos = (start + step) % size
                u = v.members[pos]
                if (u in state.task_workers.get(t, ()) or not state.is_available(u)
                        or state.load_of(u) >= constraints.x_h or (allowed is not None and u not in allowed)):
                    continue
                state.assign(u, t)
                cursors[vid] = (pos + 1) % size
                placed = True
                break
            if not placed:
                message = f"virtual worker {vid} cannot place another unit on task {t}"
                if strict:
                    raise CapacityError(message)
                logger.warning(message)
                break
    return state


# ============================================================
# C-DEX+ maintenance
# ============================================================

@dataclass
class PlusIndex:
    """C-DEX+ index: clusters, the disintegrated actual assignment and round-robin cursors."""
    clusters: list
    state: AssignmentState
    cursors: dict = field(default_factory=dict)
    alpha: float = 0.0
    space: str = "expected"

    def multiplicity(self) -> dict:
        result = {}
        for v in self.clusters:
            for t, ws in self.state.task_workers.items():
                k = len(ws.intersection(v.members))
                if k:
                    result[(v.id, t)] = k
        return result

    def copy(self) -> "PlusIndex":
        return PlusIndex(list(self.clusters), self.state.copy(), dict(self.cursors), self.alpha, self.space)


def build_cdex_plus(workers, workload: Workload, constraints: ConstraintConfig, weights: ObjectiveWeights,
                    alpha: float, space: str = "expected", budget: Optional[int] = None,
                    time_limit: Optional[float] = None) -> tuple:
    """Cluster, design and disintegrate; returns (PlusIndex, VirtualAssignment, SolveResult)."""
    roster = as_roster(workers)
    clusters = cluster_workers(roster, alpha, constraints, space)
    virtual, result = design_cdex_plus(clusters, workload, constraints, weights, budget, time_limit)
    plus = PlusIndex(clusters=clusters, state=AssignmentState.empty(roster, workload.task_ids),
                     alpha=alpha, space=space)
    if result.assignment is not None:
        plus.state = disintegrate(virtual, clusters, constraints, plus.state, plus.cursors)
    refresh_indexes(plus.state, workload, roster, weights)
    return plus, virtual, result


def _eligible_caps(clusters, state: AssignmentState, task_ids, constraints, allowed=None) -> tuple:
    caps, bounds = {}, {}
    for v in clusters:
        members = [u for u in v.members if state.is_available(u) and (allowed is None or u in allowed)]
        slots = sum(max(0, constraints.x_h - state.load_of(u)) for u in members)
        if slots <= 0:
            continue
        bounds[v.id] = (0, slots)
        for t in task_ids:
            caps[(v.id, t)] = sum(1 for u in members
                                  if u not in state.task_workers.get(t, ()) and state.load_of(u) < constraints.x_h)
    return caps, bounds


def maintain_cdex_plus(plus: PlusIndex, event: Optional[Event], workers, workload: Workload,
                       constraints: ConstraintConfig, weights: ObjectiveWeights, budget: Optional[int] = None,
                       pool: Optional[Iterable] = None) -> tuple:
    """
    Apply one churn event at virtual granularity.

    A marginal program over virtual workers with spare capacity builds on
    the true residual aggregates of the affected tasks; its units are then
    disintegrated round robin. Returns (PlusIndex, roster, SolveResult or None).
    """
    roster = as_roster(workers)
    if event is None:
        return plus, roster, None
    plus = plus.copy()
    state = plus.state
    allowed = None if pool is None else set(pool)

    if event.kind == "add":
        new_ids = [w.id for w in event.workers]
        roster = roster_after(roster, event)
        for u in new_ids:
            state.add_worker(u)
        before = {v.id for v in plus.clusters}
        plus.clusters = cluster_add_workers(plus.clusters, event.workers, plus.alpha, constraints, plus.space)
        candidates = [v for v in plus.clusters if v.id not in before]
        task_ids = workload.task_ids
    elif event.kind == "delete":
        affected_tasks = sorted({t for u in event.worker_ids for t in state.tasks_of(u)})
        for u in event.worker_ids:
            state.remove_worker(u)
        roster = roster_after(roster, event)
        plus.clusters = cluster_remove_or_update(plus.clusters, event.worker_ids, roster, plus.alpha,
                                                 constraints, plus.space)
        candidates = plus.clusters
        task_ids = affected_tasks
    elif event.kind == "update":
        ids = set(event.affected_ids)
        for u in sorted(ids):
            for t in state.tasks_of(u):
                state.release(u, t)
        roster = roster_after(roster, event)
        plus.clusters = cluster_remove_or_update(plus.clusters, ids, roster, plus.alpha, constraints, plus.space)
        candidates = [v for v in plus.clusters if ids.intersection(v.members)]
        task_ids = workload.task_ids
    elif event.kind == "decline":
        for u in event.worker_ids:
            if u not in roster:
                raise UnknownWorkerError(u)
            state.release(u, event.task_id)
        excluded = set(event.worker_ids)
        allowed = (set(roster) if allowed is None else allowed) - excluded
        candidates = plus.clusters
        task_ids = [event.task_id]
    else:
        raise ValueError(f"unknown event kind {event.kind}")

    caps, bounds = _eligible_caps(candidates, state, task_ids, constraints, allowed)
    program = build_virtual_program(
        [v for v in candidates if v.id in bounds], workload, constraints, weights,
        kind=f"virtual {event.kind}", task_ids=task_ids, caps=caps, owner_bounds=bounds,
        base_state=state, roster=roster,
    )
    result = solve(program, budget=budget)
    if result.assignment is not None:
        delta = VirtualAssignment(multiplicity=result.chosen(program), objective=result.objective)
        plus.state = disintegrate(delta, plus.clusters, constraints, state, plus.cursors,
                                  allowed=allowed, strict=False)
    refresh_indexes(plus.state, workload, roster, weights)
    logger.info(f"C-DEX+ {event.kind}: {program.variable_count} variables, status {result.status}")
    return plus, roster, result
