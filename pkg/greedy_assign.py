"""
SmartCrowd - Greedy Assignment
Highest-marginal-gain index design and maintenance
"""
import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from crowd_model import (
    TOLERANCE, AssignmentState, ConstraintConfig, Event, ObjectiveWeights,
    TaskSpec, UnknownWorkerError, Workload, as_roster, roster_after,
)
from task_value import TaskValueBreakdown, global_value, refresh_indexes, value_from_aggregates

logger = logging.getLogger(__name__)

ZERO_COST_FLOOR = 1e-12


@dataclass
class GreedyStep:
    step: int
    worker: int
    task: int
    gain: float
    running_value: float
    tier: int

    def to_dict(self) -> dict:
        return {"step": self.step, "worker": self.worker, "task": self.task,
                "gain": self.gain, "running_value": self.running_value}


@dataclass
class GreedyTrace:
    """
    Accepted (worker, task, gain) steps in order.

    pair_scans counts comparisons of per-task best candidates across
    iterations; gain_evaluations counts marginal-gain computations.
    """
    steps: list = field(default_factory=list)
    stop_reasons: dict = field(default_factory=dict)
    pair_scans: int = 0
    gain_evaluations: int = 0

    @property
    def gains(self) -> list:
        return [s.gain for s in self.steps]

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["step", "worker", "task", "gain", "running_value"])
            writer.writeheader()
            for s in self.steps:
                writer.writerow(s.to_dict())


class TaskAggregate:
    """Running expected quality/cost of one task's worker set."""

    def __init__(self, task: TaskSpec, members: Iterable, roster):
        self.task = task
        self.thresholds = np.array(task.quality_thresholds, dtype=float)
        self.members = set(members)
        self.quality = np.zeros(len(task.quality_thresholds))
        self.cost = 0.0
        for u in self.members:
            if u not in roster:
                raise UnknownWorkerError(u)
            self.quality += expected_vector(roster[u])
            self.cost += roster[u].expected_wage
        self._breakdown = None

    def breakdown(self, weights: ObjectiveWeights) -> TaskValueBreakdown:
        if self._breakdown is None:
            self._breakdown = value_from_aggregates(self.quality, self.cost, self.task, weights,
                                                    empty=not self.members)
        return self._breakdown

    def add(self, profile):
        self.members.add(profile.id)
        self.quality = self.quality + expected_vector(profile)
        self.cost += profile.expected_wage
        self._breakdown = None

    def remove(self, profile):
        self.members.discard(profile.id)
        self.quality = self.quality - expected_vector(profile)
        self.cost -= profile.expected_wage
        self._breakdown = None


def expected_vector(profile) -> np.ndarray:
    return profile.acceptance_ratio * np.asarray(profile.skills, dtype=float)


def marginal_key(agg: TaskAggregate, profile, weights: ObjectiveWeights):
    """
    Selection key (tier, score, gain) for adding a worker to a task, or None.

    Tier 1 pairs raise the task value and score by the gain. Tier 0 pairs
    leave an under-threshold task at value 0 but shrink its quality deficit;
    they score by deficit reduction per unit expected cost and are admitted
    only while that rate could still close the deficit within the remaining
    budget.
    """
    task = agg.task
    pw = profile.expected_wage
    if task.max_cost <= 0 or agg.cost + pw > task.max_cost + TOLERANCE:
        return None
    eq = expected_vector(profile)
    before = agg.breakdown(weights)
    after = value_from_aggregates(agg.quality + eq, agg.cost + pw, task, weights)
    gain = after.value - before.value
    if gain > TOLERANCE:
        return 1, gain, gain
    if before.feasible:
        return None

    deficit = np.maximum(agg.thresholds - agg.quality, 0.0)
    reduction = float(np.minimum(deficit, eq).sum())
    if reduction <= TOLERANCE:
        return None
    if pw > 0:
        residual = task.max_cost - agg.cost
        if residual <= TOLERANCE or reduction / pw < float(deficit.sum()) / residual - TOLERANCE:
            return None
    return 0, reduction / max(pw, ZERO_COST_FLOOR), gain


def _better(a, b) -> bool:
    """Compare (tier, score, worker, task) candidates; lowest ids win ties."""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    if abs(a[1] - b[1]) > 1e-12:
        return a[1] > b[1]
    return (a[2], a[3]) < (b[2], b[3])


class _GreedyRun:
    def __init__(self, state, roster, workload, weights, constraints, trace):
        self.state = state
        self.roster = roster
        self.workload = workload
        self.weights = weights
        self.constraints = constraints
        self.trace = trace
        self.aggregates = {t.id: TaskAggregate(t, state.workers_of(t.id), roster) for t in workload}
        self.running = sum(a.breakdown(weights).value for a in self.aggregates.values())

    def eligible(self, u, task_id) -> bool:
        return (self.state.is_available(u) and self.state.load_of(u) < self.constraints.x_h
                and u not in self.aggregates[task_id].members)

    def best_for_task(self, task_id, candidates):
        agg = self.aggregates[task_id]
        best = None
        cheapest = None
        for u in candidates:
            if not self.eligible(u, task_id):
                continue
            profile = self.roster[u]
            cheapest = profile.expected_wage if cheapest is None else min(cheapest, profile.expected_wage)
            self.trace.gain_evaluations += 1
            key = marginal_key(agg, profile, self.weights)
            if key is None:
                continue
            cand = (key[0], key[1], u, task_id, key[2])
            if _better(cand, best):
                best = cand
        if best is None:
            task = agg.task
            if cheapest is None:
                self.trace.stop_reasons[task_id] = "no_candidates"
            elif task.max_cost <= 0 or agg.cost + cheapest > task.max_cost + TOLERANCE:
                self.trace.stop_reasons[task_id] = "budget"
            else:
                self.trace.stop_reasons[task_id] = "no_gain"
        return best

    def commit(self, u, task_id, tier):
        agg = self.aggregates[task_id]
        before = agg.breakdown(self.weights).value
        agg.add(self.roster[u])
        self.state.assign(u, task_id)
        gain = agg.breakdown(self.weights).value - before
        self.running += gain
        self.trace.steps.append(GreedyStep(len(self.trace.steps) + 1, u, task_id, gain, self.running, tier))
        self.trace.stop_reasons.pop(task_id, None)

    def fill(self, candidates, task_ids):
        """Repeatedly commit the best pair across tasks until no task has an admissible candidate."""
        candidates = sorted(candidates)
        cache = {t: self.best_for_task(t, candidates) for t in task_ids}
        while True:
            live = [t for t in task_ids if cache[t] is not None]
            if not live:
                return
            best = None
            for t in live:
                self.trace.pair_scans += 1
                if _better(cache[t], best):
                    best = cache[t]
            tier, _, u, t, _ = best
            self.commit(u, t, tier)
            stale = [t]
            if self.state.load_of(u) >= self.constraints.x_h:
                stale += [k for k in task_ids if k != t and cache[k] is not None and cache[k][2] == u]
            for k in stale:
                cache[k] = self.best_for_task(k, candidates)

    def lift_to_minimum(self, candidates, task_ids):
        """Give every worker below X_l its best remaining task, ignoring cost only if nothing fits."""
        for u in sorted(candidates):
            while self.state.is_available(u) and self.state.load_of(u) < self.constraints.x_l:
                best = None
                profile = self.roster[u]
                for respect_cost in (True, False):
                    for t in task_ids:
                        agg = self.aggregates[t]
                        if u in agg.members:
                            continue
                        fits = (agg.task.max_cost > 0
                                and agg.cost + profile.expected_wage <= agg.task.max_cost + TOLERANCE)
                        if respect_cost and not fits:
                            continue
                        self.trace.gain_evaluations += 1
                        after = value_from_aggregates(agg.quality + expected_vector(profile),
                                                      agg.cost + profile.expected_wage, agg.task, self.weights)
                        gain = after.value - agg.breakdown(self.weights).value
                        cand = (0, gain, u, t)
                        if _better(cand, best):
                            best = cand
                    if best is not None:
                        break
                if best is None:
                    logger.warning(f"Worker {u} cannot reach X_l={self.constraints.x_l}")
                    break
                self.commit(u, best[3], -1)


def offline_greedy_design(workers, workload: Workload, constraints: ConstraintConfig, weights: ObjectiveWeights,
                          initial_state: Optional[AssignmentState] = None) -> tuple:
    """
    Greedy C-DEX design.

    Args:
        initial_state: optional partial assignment to extend instead of the empty one
    Returns:
        (AssignmentState, GreedyTrace)
    """
    roster = as_roster(workers)
    state = (initial_state.copy() if initial_state is not None
             else AssignmentState.empty(roster, workload.task_ids))
    trace = GreedyTrace()
    run = _GreedyRun(state, roster, workload, weights, constraints, trace)
    run.fill(roster, workload.task_ids)
    if constraints.x_l > 0:
        run.lift_to_minimum(roster, workload.task_ids)
    refresh_indexes(state, workload, roster, weights)
    logger.info(f"Greedy design: {len(trace.steps)} assignments, V={run.running:.4f}, "
                f"{trace.pair_scans} pair scans, {trace.gain_evaluations} gain evaluations")
    return state, trace


def online_greedy_replace(state: AssignmentState, task_id: int, unavailable: Iterable, pool: Iterable,
                          workers, workload: Workload, weights: ObjectiveWeights,
                          constraints: ConstraintConfig, trace: Optional[GreedyTrace] = None) -> AssignmentState:
    """Release decliners from a task and refill it from the pool one best worker at a time."""
    roster = as_roster(workers)
    unavailable = set(unavailable)
    state = state.copy()
    for u in sorted(unavailable):
        state.release(u, task_id)
    pool = [u for u in sorted(set(pool)) if u not in unavailable]
    for u in pool:
        if u not in roster:
            raise UnknownWorkerError(u)
    run = _GreedyRun(state, roster, workload, weights, constraints, trace or GreedyTrace())
    run.fill(pool, [task_id])
    refresh_indexes(state, workload, roster, weights)
    return state


def greedy_add_workers(state: AssignmentState, new_workers: Iterable, workers, workload: Workload,
                       weights: ObjectiveWeights, constraints: ConstraintConfig,
                       trace: Optional[GreedyTrace] = None) -> AssignmentState:
    new_workers = list(new_workers)
    roster = as_roster(list(as_roster(workers).values()) + new_workers)
    state = state.copy()
    for w in new_workers:
        state.add_worker(w.id)
    run = _GreedyRun(state, roster, workload, weights, constraints, trace or GreedyTrace())
    run.fill([w.id for w in new_workers], workload.task_ids)
    refresh_indexes(state, workload, roster, weights)
    return state


def greedy_delete_workers(state: AssignmentState, deleted: Iterable, workers, workload: Workload,
                          weights: ObjectiveWeights, constraints: ConstraintConfig,
                          trace: Optional[GreedyTrace] = None) -> AssignmentState:
    deleted = sorted(set(deleted))
    roster = as_roster(workers)
    affected = sorted({t for u in deleted for t in state.tasks_of(u)})
    state = state.copy()
    for u in deleted:
        state.remove_worker(u)
    remaining = {u: w for u, w in roster.items() if u not in deleted}
    trace = trace or GreedyTrace()
    for t in affected:
        state = online_greedy_replace(state, t, (), remaining, remaining, workload, weights, constraints, trace)
    refresh_indexes(state, workload, remaining, weights)
    return state


def greedy_update_workers(state: AssignmentState, updated: Iterable, workers, workload: Workload,
                          weights: ObjectiveWeights, constraints: ConstraintConfig,
                          trace: Optional[GreedyTrace] = None) -> AssignmentState:
    updated = list(updated)
    roster = dict(as_roster(workers))
    for w in updated:
        if w.id not in roster:
            raise UnknownWorkerError(w.id)
        roster[w.id] = w
    roster = as_roster(roster)
    ids = sorted(w.id for w in updated)
    state = state.copy()
    for u in ids:
        for t in state.tasks_of(u):
            state.release(u, t)
    run = _GreedyRun(state, roster, workload, weights, constraints, trace or GreedyTrace())
    run.fill(ids, workload.task_ids)
    if constraints.x_l > 0:
        run.lift_to_minimum(ids, workload.task_ids)
    refresh_indexes(state, workload, roster, weights)
    return state


def greedy_handle_event(state: AssignmentState, event: Event, workers, workload: Workload,
                        constraints: ConstraintConfig, weights: ObjectiveWeights,
                        pool: Optional[Iterable] = None) -> tuple:
    """Apply one churn event greedily; returns (new state, new roster, trace)."""
    roster = as_roster(workers)
    trace = GreedyTrace()
    if event.kind == "decline":
        pool = sorted(roster) if pool is None else pool
        new_state = online_greedy_replace(state, event.task_id, event.worker_ids, pool, roster, workload,
                                          weights, constraints, trace)
    elif event.kind == "add":
        new_state = greedy_add_workers(state, event.workers, roster, workload, weights, constraints, trace)
    elif event.kind == "delete":
        new_state = greedy_delete_workers(state, event.worker_ids, roster, workload, weights, constraints, trace)
    elif event.kind == "update":
        new_state = greedy_update_workers(state, event.workers, roster, workload, weights, constraints, trace)
    else:
        raise ValueError(f"unknown event kind {event.kind}")
    new_roster = roster_after(roster, event)
    logger.info(f"Greedy {event.kind}: V={global_value(new_state, workload, new_roster, weights):.4f}")
    return new_state, new_roster, trace
