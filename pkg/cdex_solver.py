"""
SmartCrowd - C-DEX Exact Solver
Design and maintenance programs solved by depth-first branch and bound
"""
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from crowd_model import (
    TOLERANCE, AssignmentState, ConstraintConfig, Event, ObjectiveWeights,
    SmartCrowdError, UnknownWorkerError, Workload, as_roster, roster_after,
)
from task_value import expected_aggregates, refresh_indexes, value_from_aggregates

logger = logging.getLogger(__name__)

NODE_BUDGET = int(os.environ.get("SMARTCROWD_NODE_BUDGET", 10_000_000))
PRUNE_EPS = 1e-12


class ProgramError(SmartCrowdError, ValueError):
    """A program that cannot be built from the given state or constraints."""


@dataclass(frozen=True)
class ProgramVariable:
    """
    One decision variable: how many units of `owner` go to `task`.

    Worker programs use 0/1 domains; virtual-worker programs allow up to the
    cluster size. A frozen variable has lower == upper.
    """
    owner: int
    task: int
    quality: tuple
    cost: float
    lower: int = 0
    upper: int = 1

    @property
    def frozen(self) -> bool:
        return self.lower == self.upper


@dataclass
class TaskTerm:
    task: object
    base_quality: tuple
    base_cost: float
    base_count: int = 0


@dataclass
class BooleanProgram:
    """
    Assignment program with one feasibility indicator per task.

    A task contributes W1*sum(q) + W2*(1 - w/W) when its aggregates (base plus
    chosen variables) meet the thresholds, else 0. Owners carry absolute
    cardinality bounds on base + chosen units. target_tasks lists the tasks a
    marginal program re-optimizes (empty for full designs).
    """
    kind: str
    variables: list
    tasks: dict
    owner_bounds: dict
    owner_base: dict
    weights: ObjectiveWeights
    base_state: AssignmentState
    roster: dict
    released: list = field(default_factory=list)
    removed_workers: list = field(default_factory=list)
    added_workers: list = field(default_factory=list)
    var_prefix: str = "w"
    target_tasks: list = field(default_factory=list)

    @property
    def variable_count(self) -> int:
        return len(self.variables)

    @property
    def frozen(self) -> dict:
        return {i: v.lower for i, v in enumerate(self.variables) if v.frozen}

    def variable_name(self, i: int) -> str:
        v = self.variables[i]
        return f"{self.var_prefix}{v.owner}_t{v.task}"

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "variables": self.variable_count,
            "frozen": len(self.frozen),
            "task_rows": 2 * len(self.tasks),
            "owner_ranges": len(self.owner_bounds),
        }

    def values_from_pairs(self, pairs: Iterable) -> list:
        """Variable values for a set of (owner, task) pairs or an {(owner, task): units} map."""
        if isinstance(pairs, dict):
            chosen = pairs
        else:
            chosen = {p: 1 for p in pairs}
        return [min(v.upper, max(v.lower, chosen.get((v.owner, v.task), 0))) for v in self.variables]

    def task_aggregates(self, values) -> dict:
        aggregates = {}
        for k, term in self.tasks.items():
            aggregates[k] = [list(term.base_quality), term.base_cost, term.base_count]
        for v, x in zip(self.variables, values):
            if x:
                agg = aggregates[v.task]
                for j, q in enumerate(v.quality):
                    agg[0][j] += x * q
                agg[1] += x * v.cost
                agg[2] += x
        return aggregates

    def task_values(self, values) -> dict:
        result = {}
        for k, (quality, cost, count) in self.task_aggregates(values).items():
            result[k] = value_from_aggregates(quality, cost, self.tasks[k].task, self.weights, empty=count == 0)
        return result

    def evaluate(self, values) -> float:
        return float(sum(b.value for b in self.task_values(values).values()))

    def owner_counts(self, values) -> dict:
        counts = dict(self.owner_base)
        for v, x in zip(self.variables, values):
            counts[v.owner] = counts.get(v.owner, 0) + x
        return counts

    def is_feasible(self, values) -> bool:
        if len(values) != len(self.variables):
            return False
        if any(x < v.lower or x > v.upper for v, x in zip(self.variables, values)):
            return False
        counts = self.owner_counts(values)
        return all(lo <= counts.get(o, 0) <= hi for o, (lo, hi) in self.owner_bounds.items())


@dataclass
class SolveResult:
    """
    Outcome of one solve.

    status is one of optimal, feasible (budget hit after an incumbent was
    found), infeasible (owner bounds cannot be met), budget_exhausted (no
    incumbent before the budget ran out) or no_candidates (a marginal program
    with no variables leaves a target task below its thresholds; its empty
    assignment still applies).
    """
    status: str
    assignment: Optional[list]
    objective: float
    nodes: int
    proven_optimal: bool
    root_bound: float
    elapsed: float
    infeasible_tasks: list = field(default_factory=list)

    def chosen(self, program: BooleanProgram) -> dict:
        if self.assignment is None:
            return {}
        return {(v.owner, v.task): x for v, x in zip(program.variables, self.assignment) if x}

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "nodes": self.nodes,
            "proven_optimal": self.proven_optimal,
            "root_bound": self.root_bound,
            "elapsed": round(self.elapsed, 4),
            "infeasible_tasks": self.infeasible_tasks,
        }


# ============================================================
# Program builders
# ============================================================

def _expected_vectors(profile) -> tuple:
    p = profile.acceptance_ratio
    return tuple(float(x) for x in (p * np.asarray(profile.skills, dtype=float)).tolist()), p * profile.wage


def task_term(task, worker_ids, roster) -> TaskTerm:
    worker_ids = set(worker_ids)
    if worker_ids:
        quality, cost = expected_aggregates(worker_ids, roster)
    else:
        quality, cost = tuple(0.0 for _ in task.quality_thresholds), 0.0
    return TaskTerm(task=task, base_quality=tuple(quality), base_cost=cost, base_count=len(worker_ids))


def _worker_variables(worker_ids, task_ids, roster, freeze=None) -> list:
    freeze = freeze or {}
    variables = []
    for u in worker_ids:
        quality, cost = _expected_vectors(roster[u])
        for t in task_ids:
            fixed = freeze.get((u, t))
            lower, upper = (0, 1) if fixed is None else (int(fixed), int(fixed))
            variables.append(ProgramVariable(owner=u, task=t, quality=quality, cost=cost, lower=lower, upper=upper))
    return variables


def build_design_program(workers, workload: Workload, constraints: ConstraintConfig,
                         weights: ObjectiveWeights, freeze: Optional[dict] = None) -> BooleanProgram:
    """
    Full C-DEX design program: one 0/1 variable per (worker, task) and
    per-worker cardinality in [X_l, X_h].

    Args:
        freeze: optional {(worker, task): 0|1} pairs fixed for the search
    """
    roster = as_roster(workers)
    if constraints.x_l > len(workload):
        raise ProgramError(f"X_l={constraints.x_l} exceeds the number of tasks ({len(workload)})")
    if constraints.x_l > constraints.x_h:
        raise ProgramError(f"X_l={constraints.x_l} exceeds X_h={constraints.x_h}")

    task_ids = workload.task_ids
    program = BooleanProgram(
        kind="design",
        variables=_worker_variables(list(roster), task_ids, roster, freeze),
        tasks={t.id: task_term(t, (), roster) for t in workload},
        owner_bounds={u: (constraints.x_l, constraints.x_h) for u in roster},
        owner_base={u: 0 for u in roster},
        weights=weights,
        base_state=AssignmentState.empty(roster, task_ids),
        roster=roster,
    )
    logger.info(f"Design program: {len(roster)} workers x {len(task_ids)} tasks = {program.variable_count} variables")
    return program


def freeze_pairs(state: AssignmentState, worker_ids: Iterable, task_ids: Iterable,
                 free_tasks: Iterable = ()) -> dict:
    """Freeze map holding the given workers at their current assignment, except on free_tasks where
    only their existing pairs are held."""
    free_tasks = set(free_tasks)
    freeze = {}
    for u in worker_ids:
        for t in task_ids:
            held = u in state.task_workers.get(t, ())
            if held:
                freeze[(u, t)] = 1
            elif t not in free_tasks:
                freeze[(u, t)] = 0
    return freeze


def _eligible(state: AssignmentState, u, x_h: int) -> bool:
    return state.is_available(u) and state.load_of(u) < x_h


def _marginal_program(kind, state, roster, workload, weights, candidates, task_ids, bounds,
                      released=(), removed=(), added=(), exclude=frozenset()) -> BooleanProgram:
    base_state = state.copy()
    for u, t in released:
        base_state.release(u, t)
    for u in removed:
        base_state.remove_worker(u)
    for u in added:
        base_state.add_worker(u)

    variables = []
    for u in candidates:
        quality, cost = _expected_vectors(roster[u])
        for t in task_ids:
            if u in base_state.task_workers.get(t, ()) or (u, t) in exclude:
                continue
            variables.append(ProgramVariable(owner=u, task=t, quality=quality, cost=cost))

    owners = sorted({v.owner for v in variables})
    program = BooleanProgram(
        kind=kind,
        variables=variables,
        tasks={t.id: task_term(t, base_state.workers_of(t.id), roster) for t in workload},
        owner_bounds={u: bounds for u in owners},
        owner_base={u: base_state.load_of(u) for u in owners},
        weights=weights,
        base_state=base_state,
        roster=roster,
        released=list(released),
        removed_workers=list(removed),
        added_workers=list(added),
        target_tasks=list(task_ids),
    )
    logger.info(f"{kind.capitalize()} program: {len(owners)} candidate workers, {program.variable_count} variables")
    return program


def build_replacement_program(state: AssignmentState, task_id: int, unavailable: Iterable, pool: Iterable,
                              workers, workload: Workload, weights: ObjectiveWeights,
                              constraints: ConstraintConfig) -> BooleanProgram:
    """
    Marginal program for one task after some of its workers declined or left.

    Decliners' pairs on the task are released; every other pair stays. Only
    available pool workers below X_h who are not on the task already become
    variables.
    """
    roster = as_roster(workers)
    workload.task(task_id)
    unavailable = set(unavailable)
    members = state.workers_of(task_id)
    released = sorted((u, task_id) for u in unavailable if u in members)

    candidates = []
    for u in sorted(set(pool)):
        if u not in roster:
            raise UnknownWorkerError(u)
        if u in unavailable or u in members:
            continue
        if _eligible(state, u, constraints.x_h):
            candidates.append(u)

    return _marginal_program("replacement", state, roster, workload, weights, candidates, [task_id],
                             (0, constraints.x_h), released=released)


def build_online_program(state: AssignmentState, candidates: Iterable, task_ids: Iterable, workers,
                         workload: Workload, weights: ObjectiveWeights, constraints: ConstraintConfig,
                         exclude: Iterable = ()) -> BooleanProgram:
    """Place currently reachable candidates on open tasks on top of the pairs already held."""
    roster = as_roster(workers)
    candidates = [u for u in sorted(set(candidates)) if _eligible(state, u, constraints.x_h)]
    return _marginal_program("online", state, roster, workload, weights, candidates, list(task_ids),
                             (0, constraints.x_h), exclude=frozenset(exclude))


def build_addition_program(state: AssignmentState, new_workers: Iterable, workers, workload: Workload,
                           weights: ObjectiveWeights, constraints: ConstraintConfig) -> BooleanProgram:
    """New workers x all tasks with cardinality [0, X_h]; existing pairs untouched."""
    new_workers = list(new_workers)
    roster = as_roster(workers)
    for w in new_workers:
        if w.id in roster or w.id in state.load:
            raise ProgramError(f"worker {w.id} already exists")
    roster = as_roster(list(roster.values()) + new_workers)
    new_ids = [w.id for w in new_workers]
    return _marginal_program("addition", state, roster, workload, weights, new_ids, workload.task_ids,
                             (0, constraints.x_h), added=new_ids)


def build_deletion_program(state: AssignmentState, deleted: Iterable, workers, workload: Workload,
                           weights: ObjectiveWeights, constraints: ConstraintConfig) -> BooleanProgram:
    """Tasks that lose workers are re-optimized over the remaining non-maxed workers."""
    deleted = sorted(set(deleted))
    roster = as_roster(workers)
    affected = sorted({t for u in deleted for t in state.tasks_of(u)})
    released = sorted((u, t) for u in deleted for t in state.tasks_of(u))
    remaining = {u: w for u, w in roster.items() if u not in deleted}

    candidates = [u for u in remaining if _eligible(state, u, constraints.x_h)] if affected else []
    return _marginal_program("deletion", state, remaining, workload, weights, candidates, affected,
                             (0, constraints.x_h), released=released, removed=deleted)


def build_update_program(state: AssignmentState, updated: Iterable, workers, workload: Workload,
                         weights: ObjectiveWeights, constraints: ConstraintConfig) -> BooleanProgram:
    """Updated workers are pulled off every task and re-placed with their new profiles under [X_l, X_h]."""
    updated = list(updated)
    roster = as_roster(workers)
    for w in updated:
        if w.id not in roster:
            raise UnknownWorkerError(w.id)
    roster = dict(roster)
    for w in updated:
        roster[w.id] = w
    roster = as_roster(roster)
    ids = sorted(w.id for w in updated)
    released = sorted((u, t) for u in ids for t in state.tasks_of(u))
    candidates = [u for u in ids if state.is_available(u)]
    return _marginal_program("update", state, roster, workload, weights, candidates, workload.task_ids,
                             (constraints.x_l, constraints.x_h), released=released)


# ============================================================
# Branch and bound
# ============================================================

class _Search:
    """Iterative depth-first search with an undo trail over a BooleanProgram."""

    def __init__(self, program: BooleanProgram):
        self.program = program
        w = program.weights
        self.w1, self.w2 = w.w1, w.w2

        self.task_keys = list(program.tasks)
        task_pos = {k: i for i, k in enumerate(self.task_keys)}
        T = len(self.task_keys)
        self.thresholds = [list(program.tasks[k].task.quality_thresholds) for k in self.task_keys]
        self.budgets = [float(program.tasks[k].task.max_cost) for k in self.task_keys]
        self.empty_ok = [all(q <= TOLERANCE for q in th) for th in self.thresholds]
        self.m = len(self.thresholds[0]) if T else 0

        self.qfix = [list(program.tasks[k].base_quality) for k in self.task_keys]
        self.cfix = [program.tasks[k].base_cost for k in self.task_keys]
        self.count = [program.tasks[k].base_count for k in self.task_keys]
        self.qfree = [[0.0] * self.m for _ in range(T)]

        owner_keys = sorted({v.owner for v in program.variables} | set(program.owner_bounds))
        owner_pos = {o: i for i, o in enumerate(owner_keys)}
        self.owner_keys = owner_keys
        self.lo = [program.owner_bounds.get(o, (0, 10 ** 9))[0] for o in owner_keys]
        self.hi = [program.owner_bounds.get(o, (0, 10 ** 9))[1] for o in owner_keys]
        self.ocount = [program.owner_base.get(o, 0) for o in owner_keys]
        self.ofree = [0] * len(owner_keys)

        variables = program.variables
        gains = np.array([self._unit_gain(v, program.tasks[v.task].task.max_cost) for v in variables])
        keys = sorted(range(len(variables)),
                      key=lambda i: (-gains[i], variables[i].owner, variables[i].task))
        self.order = keys
        self.var_task = [task_pos[v.task] for v in variables]
        self.var_owner = [owner_pos[v.owner] for v in variables]
        self.var_q = [list(v.quality) for v in variables]
        self.var_c = [v.cost for v in variables]
        self.var_lo = [v.lower for v in variables]
        self.var_ub = [v.upper for v in variables]

        for i, v in enumerate(variables):
            k = self.var_task[i]
            for j in range(self.m):
                self.qfree[k][j] += v.upper * self.var_q[i][j]
            self.ofree[self.var_owner[i]] += v.upper

        self.task_bound = [self._bound(k) for k in range(T)]
        self.total_bound = sum(self.task_bound)
        self.values = [0] * len(variables)

    def _unit_gain(self, v, max_cost) -> float:
        cost_part = v.cost / max_cost if max_cost > 0 else 1.0
        return self.w1 * sum(v.quality) - self.w2 * cost_part

    def _bound(self, k: int) -> float:
        W = self.budgets[k]
        if W <= 0:
            if self.count[k] > 0:
                return 0.0
            return self.w2 if self.empty_ok[k] else 0.0
        if self.cfix[k] > W + TOLERANCE:
            return 0.0
        qf, qr, Q = self.qfix[k], self.qfree[k], self.thresholds[k]
        total = 0.0
        for j in range(self.m):
            a = qf[j] + qr[j]
            if a < Q[j] - TOLERANCE:
                return 0.0
            total += a
        return self.w1 * total + self.w2 * (1.0 - self.cfix[k] / W)

    def root_feasible(self) -> bool:
        for o in range(len(self.owner_keys)):
            if self.ocount[o] > self.hi[o] or self.ocount[o] + self.ofree[o] < self.lo[o]:
                return False
        return True

    def domain(self, i: int) -> list:
        o = self.var_owner[i]
        ub = self.var_ub[i]
        count, rest = self.ocount[o], self.ofree[o] - ub
        return [x for x in range(ub, self.var_lo[i] - 1, -1)
                if count + x <= self.hi[o] and count + x + rest >= self.lo[o]]

    def apply(self, i: int, x: int) -> tuple:
        k, o = self.var_task[i], self.var_owner[i]
        saved = (k, list(self.qfix[k]), self.cfix[k], self.count[k], list(self.qfree[k]), self.task_bound[k])
        ub = self.var_ub[i]
        q = self.var_q[i]
        qf, qr = self.qfix[k], self.qfree[k]
        for j in range(self.m):
            qr[j] -= ub * q[j]
            qf[j] += x * q[j]
        self.cfix[k] += x * self.var_c[i]
        self.count[k] += x
        self.ocount[o] += x
        self.ofree[o] -= ub
        self.values[i] = x
        b = self._bound(k)
        self.total_bound += b - self.task_bound[k]
        self.task_bound[k] = b
        return saved

    def undo(self, i: int, x: int, saved: tuple):
        k, qf, cf, cnt, qr, b = saved
        o = self.var_owner[i]
        self.qfix[k], self.cfix[k], self.count[k], self.qfree[k] = qf, cf, cnt, qr
        self.total_bound += b - self.task_bound[k]
        self.task_bound[k] = b
        self.ocount[o] -= x
        self.ofree[o] += self.var_ub[i]
        self.values[i] = 0


def _drop_idle_assignments(program: BooleanProgram, values: list) -> list:
    """Unassign free variables on tasks that end with value 0 wherever owner lower bounds allow."""
    values = list(values)
    baseline = program.evaluate(values)
    counts = program.owner_counts(values)
    breakdowns = program.task_values(values)
    for k, breakdown in breakdowns.items():
        if breakdown.feasible and breakdown.value > 0:
            continue
        trial = list(values)
        trial_counts = dict(counts)
        for i, v in enumerate(program.variables):
            if v.task != k or v.frozen or trial[i] <= v.lower:
                continue
            lo = program.owner_bounds.get(v.owner, (0, 0))[0]
            drop = trial[i] - v.lower
            if trial_counts[v.owner] - drop >= lo:
                trial[i] = v.lower
                trial_counts[v.owner] -= drop
        if trial != values and program.evaluate(trial) >= baseline - PRUNE_EPS:
            values, counts = trial, trial_counts
            baseline = program.evaluate(values)
    return values


def solve(program: BooleanProgram, budget: Optional[int] = None, time_limit: Optional[float] = None,
          incumbent: Optional[list] = None) -> SolveResult:
    """
    Maximize the program objective exactly, or up to a node/time budget.

    Args:
        budget: node limit (defaults to SMARTCROWD_NODE_BUDGET)
        time_limit: optional wall-clock limit in seconds
        incumbent: optional starting solution; ignored when it violates the program
    """
    budget = NODE_BUDGET if budget is None else budget
    started = time.perf_counter()
    search = _Search(program)
    root_bound = search.total_bound

    def finish(status, values, nodes):
        elapsed = time.perf_counter() - started
        if values is None:
            return SolveResult(status, None, 0.0, nodes, False, root_bound, elapsed)
        values = _drop_idle_assignments(program, values)
        breakdowns = program.task_values(values)
        infeasible = [k for k, b in breakdowns.items() if not b.feasible]
        objective = float(sum(b.value for b in breakdowns.values()))
        return SolveResult(status, values, objective, nodes, status == "optimal", root_bound, elapsed,
                           infeasible_tasks=infeasible)

    if not search.root_feasible():
        logger.warning(f"{program.kind} program infeasible: owner bounds cannot be met")
        return finish("infeasible", None, 0)

    best_values, best = None, None
    if incumbent is not None:
        if program.is_feasible(incumbent):
            best_values, best = list(incumbent), program.evaluate(incumbent)
        else:
            logger.warning("Ignoring incumbent that violates the program")

    order = search.order
    n = len(order)
    if n == 0:
        result = finish("optimal", [], 0)
        stranded = [k for k in program.target_tasks if k in result.infeasible_tasks]
        if stranded:
            logger.warning(f"{program.kind} program has no candidates; task(s) {stranded} stay below threshold")
            result.status = "no_candidates"
            result.proven_optimal = False
        return result

    nodes = 0
    exhausted = False
    candidates = [None] * n
    position = [0] * n
    applied = [None] * n
    depth = 0
    candidates[0] = search.domain(order[0])

    while depth >= 0:
        i = order[depth]
        if applied[depth] is not None:
            search.undo(i, *applied[depth])
            applied[depth] = None

        if position[depth] >= len(candidates[depth]):
            depth -= 1
            continue
        if nodes >= budget or (time_limit is not None and nodes % 1024 == 0
                               and time.perf_counter() - started > time_limit):
            exhausted = True
            break

        x = candidates[depth][position[depth]]
        position[depth] += 1
        applied[depth] = (x, search.apply(i, x))
        nodes += 1

        if best is not None and search.total_bound <= best + PRUNE_EPS:
            continue
        if depth + 1 == n:
            best = search.total_bound
            best_values = list(search.values)
            continue

        depth += 1
        candidates[depth] = search.domain(order[depth])
        position[depth] = 0
        applied[depth] = None

    if exhausted:
        for d in range(depth, -1, -1):
            if applied[d] is not None:
                search.undo(order[d], *applied[d])
        status = "feasible" if best_values is not None else "budget_exhausted"
        logger.warning(f"{program.kind} solve hit the node budget ({budget}) after {nodes} nodes")
    else:
        status = "optimal" if best_values is not None else "infeasible"

    result = finish(status, best_values, nodes)
    logger.info(f"{program.kind} solve: {result.status}, V={result.objective:.4f}, "
                f"{nodes} nodes, root bound {root_bound:.4f}")
    return result


def apply_solution(program: BooleanProgram, result: SolveResult) -> AssignmentState:
    """New state with the program's chosen worker pairs added to its base state."""
    if result.assignment is None:
        raise ProgramError(f"cannot apply a {result.status} result")
    state = program.base_state.copy()
    for (u, t), x in sorted(result.chosen(program).items()):
        state.assign(u, t)
    refresh_indexes(state, [term.task for term in program.tasks.values()], program.roster, program.weights)
    return state


def design_exact(workers, workload: Workload, constraints: ConstraintConfig, weights: ObjectiveWeights,
                 budget: Optional[int] = None, time_limit: Optional[float] = None,
                 incumbent_pairs: Optional[Iterable] = None) -> tuple:
    """Build, solve and apply the design program; returns (state, result)."""
    program = build_design_program(workers, workload, constraints, weights)
    incumbent = program.values_from_pairs(incumbent_pairs) if incumbent_pairs is not None else None
    result = solve(program, budget=budget, time_limit=time_limit, incumbent=incumbent)
    if result.assignment is None:
        return None, result
    return apply_solution(program, result), result


def handle_event(state: AssignmentState, event: Event, workers, workload: Workload,
                 constraints: ConstraintConfig, weights: ObjectiveWeights,
                 budget: Optional[int] = None, pool: Optional[Iterable] = None) -> tuple:
    """
    Apply one churn event through its marginal program.

    Returns (new state, new roster, solve result). On an infeasible or
    unsolved program the state and roster come back unchanged.
    """
    roster = as_roster(workers)
    if event.kind == "decline":
        pool = sorted(roster) if pool is None else pool
        program = build_replacement_program(state, event.task_id, event.worker_ids, pool,
                                            roster, workload, weights, constraints)
    elif event.kind == "add":
        program = build_addition_program(state, event.workers, roster, workload, weights, constraints)
    elif event.kind == "delete":
        program = build_deletion_program(state, event.worker_ids, roster, workload, weights, constraints)
    elif event.kind == "update":
        program = build_update_program(state, event.workers, roster, workload, weights, constraints)
    else:
        raise ProgramError(f"unknown event kind {event.kind}")

    result = solve(program, budget=budget)
    if result.assignment is None:
        return state, roster, result
    new_state = apply_solution(program, result)
    return new_state, roster_after(roster, event), result


# ============================================================
# LP export
# ============================================================

def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _linear(terms) -> str:
    parts = []
    for coef, name in terms:
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(coef))} {name}")
    if not parts:
        return "0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def to_lp(program: BooleanProgram) -> str:
    """
    CPLEX-LP text of the program with the task indicators made explicit.

    Variables are w{worker}_t{task} (v{virtual}_t{task} for clusters), y_t{task}
    marks a task as served and z_t{task} carries its value.
    """
    w1, w2 = program.weights.w1, program.weights.w2
    by_task = {k: [] for k in program.tasks}
    for i, v in enumerate(program.variables):
        by_task[v.task].append(i)

    objective = _linear([(1.0, f"z_t{k}") for k in program.tasks])
    rows = []
    fixed_y = {}
    for k, term in program.tasks.items():
        task = term.task
        idx = by_task[k]
        y, z = f"y_t{k}", f"z_t{k}"
        base_qsum = sum(term.base_quality)

        for j, threshold in enumerate(task.quality_thresholds):
            if threshold <= 0:
                continue
            lhs = [(program.variables[i].quality[j], program.variable_name(i)) for i in idx]
            lhs.append((-threshold, y))
            rows.append((f"q_t{k}_s{j}", _linear(lhs), ">=", -term.base_quality[j]))

        if task.max_cost > 0:
            big_m = term.base_cost + sum(program.variables[i].upper * program.variables[i].cost for i in idx)
            lhs = [(program.variables[i].cost, program.variable_name(i)) for i in idx] + [(big_m, y)]
            rows.append((f"c_t{k}", _linear(lhs), "<=", task.max_cost - term.base_cost + big_m))

            value = [(-w1 * sum(program.variables[i].quality) + w2 * program.variables[i].cost / task.max_cost,
                      program.variable_name(i)) for i in idx]
            rows.append((f"v_t{k}", _linear([(1.0, z)] + value), "<=",
                         w1 * base_qsum + w2 * (1.0 - term.base_cost / task.max_cost)))
            cap = w1 * (base_qsum + sum(program.variables[i].upper * sum(program.variables[i].quality)
                                        for i in idx)) + w2
        else:
            units = sum(program.variables[i].upper for i in idx)
            if units:
                rows.append((f"e_t{k}", _linear([(1.0, program.variable_name(i)) for i in idx] + [(units, y)]),
                             "<=", units))
            if term.base_count > 0:
                fixed_y[y] = 0
            rows.append((f"v_t{k}", _linear([(1.0, z)]), "<=", w2))
            cap = w2
        rows.append((f"m_t{k}", _linear([(1.0, z), (-cap, y)]), "<=", 0.0))

    owners = {}
    for i, v in enumerate(program.variables):
        owners.setdefault(v.owner, []).append(i)
    for o in sorted(owners):
        lo, hi = program.owner_bounds.get(o, (0, None))
        base = program.owner_base.get(o, 0)
        terms = _linear([(1.0, program.variable_name(i)) for i in owners[o]])
        if lo - base > 0:
            rows.append((f"lo_{program.var_prefix}{o}", terms, ">=", lo - base))
        if hi is not None:
            rows.append((f"hi_{program.var_prefix}{o}", terms, "<=", hi - base))

    lines = ["\\ SmartCrowd " + program.kind + " program", "Maximize", f" obj: {objective}", "Subject To"]
    for name, lhs, sense, rhs in rows:
        lines.append(f" {name}: {lhs} {sense} {_fmt(rhs)}")

    lines.append("Bounds")
    for i, v in enumerate(program.variables):
        name = program.variable_name(i)
        if v.frozen:
            lines.append(f" {name} = {v.lower}")
        elif v.upper > 1 or v.lower > 0:
            lines.append(f" {v.lower} <= {name} <= {v.upper}")
    for y, val in sorted(fixed_y.items()):
        lines.append(f" {y} = {val}")

    binaries = [program.variable_name(i) for i, v in enumerate(program.variables) if v.upper <= 1]
    generals = [program.variable_name(i) for i, v in enumerate(program.variables) if v.upper > 1]
    binaries += [f"y_t{k}" for k in program.tasks]
    lines.append("Binary")
    lines.extend(f" {b}" for b in binaries)
    if generals:
        lines.append("General")
        lines.extend(f" {g}" for g in generals)
    lines.append("End")
    return "\n".join(lines) + "\n"
