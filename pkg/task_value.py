"""
SmartCrowd - Task Value
Expected aggregates, per-task value, global objective and constraint checks
"""
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from crowd_model import (
    TOLERANCE, AssignmentState, CDexIndex, ConstraintConfig, ObjectiveWeights,
    TaskSpec, UnknownWorkerError, Workload,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskValueBreakdown:
    """
    Value of one worker set on one task.

    value is W1*quality_term + W2*cost_term when the set meets every quality
    threshold and the cost threshold, else 0. unconstrained_value is the same
    combination without the feasibility cut.
    """
    value: float
    quality_term: float
    cost_term: float
    feasible: bool
    unconstrained_value: float
    expected_quality: tuple
    expected_cost: float

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "quality_term": self.quality_term,
            "cost_term": self.cost_term,
            "feasible": self.feasible,
            "unconstrained_value": self.unconstrained_value,
            "expected_quality": list(self.expected_quality),
            "expected_cost": self.expected_cost,
        }


def expected_aggregates(worker_ids: Iterable, workers) -> tuple:
    """Sum of p_u * skills and p_u * wage over a worker set."""
    ids = sorted(set(worker_ids))
    for u in ids:
        if u not in workers:
            raise UnknownWorkerError(u)
    if not ids:
        m = len(next(iter(workers.values())).skills) if workers else 0
        return tuple(0.0 for _ in range(m)), 0.0

    p = np.array([workers[u].acceptance_ratio for u in ids])
    skills = np.array([workers[u].skills for u in ids], dtype=float)
    wages = np.array([workers[u].wage for u in ids])
    quality = (p[:, None] * skills).sum(axis=0)
    cost = float(p @ wages)
    return tuple(quality.tolist()), cost


def value_from_aggregates(quality, cost: float, task: TaskSpec, weights: ObjectiveWeights,
                          empty: bool = False) -> TaskValueBreakdown:
    quality = tuple(float(q) for q in quality)
    quality_term = float(sum(quality))
    meets_quality = all(q >= threshold - TOLERANCE for q, threshold in zip(quality, task.quality_thresholds))

    if task.max_cost > 0:
        cost_term = 1.0 - cost / task.max_cost
        meets_cost = cost <= task.max_cost + TOLERANCE
    elif empty:
        cost_term = 1.0
        meets_cost = True
    else:
        # zero budget admits no worker at all
        cost_term = 0.0
        meets_cost = False

    unconstrained = weights.w1 * quality_term + weights.w2 * cost_term
    feasible = meets_quality and meets_cost
    return TaskValueBreakdown(
        value=unconstrained if feasible else 0.0,
        quality_term=quality_term,
        cost_term=cost_term,
        feasible=feasible,
        unconstrained_value=unconstrained,
        expected_quality=quality,
        expected_cost=cost,
    )


def task_value(worker_ids: Iterable, task: TaskSpec, workers, weights: ObjectiveWeights) -> TaskValueBreakdown:
    worker_ids = set(worker_ids)
    if not worker_ids:
        quality = tuple(0.0 for _ in task.quality_thresholds)
        return value_from_aggregates(quality, 0.0, task, weights, empty=True)
    quality, cost = expected_aggregates(worker_ids, workers)
    return value_from_aggregates(quality, cost, task, weights)


def build_index(worker_ids: Iterable, task: TaskSpec, workers, weights: ObjectiveWeights) -> CDexIndex:
    worker_ids = frozenset(worker_ids)
    breakdown = task_value(worker_ids, task, workers, weights)
    return CDexIndex(
        task_id=task.id,
        value=breakdown.value,
        expected_quality=breakdown.expected_quality,
        expected_cost=breakdown.expected_cost,
        assigned_workers=worker_ids,
    )


def refresh_indexes(state: AssignmentState, workload: Iterable, workers, weights: ObjectiveWeights) -> dict:
    """Recompute every CDexIndex of the state from its worker sets (workload may be any task iterable)."""
    state.indexes = {t.id: build_index(state.workers_of(t.id), t, workers, weights) for t in workload}
    return state.indexes


def global_value(state: AssignmentState, workload: Workload, workers, weights: ObjectiveWeights) -> float:
    return float(sum(task_value(state.workers_of(t.id), t, workers, weights).value for t in workload))


def unconstrained_global_value(state: AssignmentState, workload: Workload, workers,
                               weights: ObjectiveWeights) -> float:
    return float(sum(
        task_value(state.workers_of(t.id), t, workers, weights).unconstrained_value for t in workload
    ))


def check_constraints(state: AssignmentState, workload: Workload, workers,
                      constraints: ConstraintConfig) -> list:
    """
    Every violated constraint of an assignment.

    Quality and cost are checked on tasks that hold at least one worker; a task
    with nobody assigned is unserved rather than violated.
    """
    violations = []
    known_tasks = set(workload.task_ids)

    for t_id in sorted(state.task_workers):
        if t_id not in known_tasks and state.task_workers[t_id]:
            violations.append(f"task {t_id}: not in workload")
    for t in workload:
        assigned = state.workers_of(t.id)
        unknown = sorted(u for u in assigned if u not in workers)
        for u in unknown:
            violations.append(f"task {t.id}: unknown worker {u}")
        assigned = assigned - set(unknown)
        if not assigned:
            continue
        quality, cost = expected_aggregates(assigned, workers)
        for j, (q, threshold) in enumerate(zip(quality, t.quality_thresholds)):
            if q < threshold - TOLERANCE:
                violations.append(f"task {t.id}: quality {q:.4f} below threshold {threshold:.4f} on skill {j}")
        if t.max_cost <= 0 or cost > t.max_cost + TOLERANCE:
            violations.append(f"task {t.id}: cost {cost:.4f} exceeds max cost {t.max_cost:.4f}")

    for u in sorted(workers):
        c = state.load_of(u)
        if c > constraints.x_h:
            violations.append(f"worker {u}: {c} tasks exceeds X_h={constraints.x_h}")
        if c < constraints.x_l:
            violations.append(f"worker {u}: {c} tasks below X_l={constraints.x_l}")

    violations.extend(state.load_errors())
    return violations


def index_errors(indexes: Iterable, workload: Workload, workers, weights: ObjectiveWeights) -> list:
    """Stored P vectors that do not match recomputation from their worker sets."""
    errors = []
    for index in indexes:
        fresh = build_index(index.assigned_workers, workload.task(index.task_id), workers, weights)
        if abs(fresh.expected_cost - index.expected_cost) > TOLERANCE:
            errors.append(f"task {index.task_id}: stored cost {index.expected_cost} != {fresh.expected_cost}")
        if len(fresh.expected_quality) != len(index.expected_quality) or any(
            abs(a - b) > TOLERANCE for a, b in zip(fresh.expected_quality, index.expected_quality)
        ):
            errors.append(f"task {index.task_id}: stored quality {list(index.expected_quality)} "
                          f"!= {list(fresh.expected_quality)}")
        if abs(fresh.value - index.value) > TOLERANCE:
            errors.append(f"task {index.task_id}: stored value {index.value} != {fresh.value}")
    return errors
