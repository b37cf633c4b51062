"""
SmartCrowd - Brute Force Oracle
Exhaustive enumeration of small assignment instances
"""
import itertools
from typing import Optional

import numpy as np

from crowd_model import (
    TOLERANCE, ConstraintConfig, Instance, ObjectiveWeights, TaskSpec, WorkerProfile, Workload, as_roster,
)

CHUNK_BITS = 16
MAX_VARIABLES = 22


def brute_force_optimum(workers, workload: Workload, constraints: ConstraintConfig, weights: ObjectiveWeights,
                        freeze: Optional[dict] = None) -> tuple:
    """
    Best global value over every 0/1 assignment of workers to tasks.

    Returns (value, pairs) for the first optimal mask in enumeration order,
    or (None, None) when no assignment meets the tasks-per-worker bounds.
    """
    roster = as_roster(workers)
    worker_ids = list(roster)
    tasks = list(workload)
    n, T = len(worker_ids), len(tasks)
    k = n * T
    if k > MAX_VARIABLES:
        raise ValueError(f"{k} variables is too many to enumerate")

    p = np.array([roster[u].acceptance_ratio for u in worker_ids])
    eq = p[:, None] * np.array([roster[u].skills for u in worker_ids], dtype=float).reshape(n, -1)
    ew = p * np.array([roster[u].wage for u in worker_ids])

    fixed_one = np.zeros(k, dtype=bool)
    fixed_zero = np.zeros(k, dtype=bool)
    for (u, t_id), x in (freeze or {}).items():
        col = worker_ids.index(u) * T + [t.id for t in tasks].index(t_id)
        (fixed_one if x else fixed_zero)[col] = True

    best_value, best_mask = None, None
    total = 1 << k
    chunk = 1 << min(CHUNK_BITS, k)
    shifts = np.arange(k, dtype=np.int64)
    for start in range(0, total, chunk):
        masks = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((masks[:, None] >> shifts) & 1).astype(bool)

        ok = np.all(bits[:, fixed_one], axis=1) & ~np.any(bits[:, fixed_zero], axis=1)
        per_worker = bits.reshape(-1, n, T).sum(axis=2)
        ok &= np.all((per_worker >= constraints.x_l) & (per_worker <= constraints.x_h), axis=1)
        if not ok.any():
            continue

        values = np.zeros(len(masks))
        for ti, task in enumerate(tasks):
            x = bits[:, ti::T].astype(float)
            quality = x @ eq
            cost = x @ ew
            count = x.sum(axis=1)
            thresholds = np.array(task.quality_thresholds)
            meets_quality = np.all(quality >= thresholds - TOLERANCE, axis=1)
            if task.max_cost > 0:
                cost_term = 1.0 - cost / task.max_cost
                meets_cost = cost <= task.max_cost + TOLERANCE
            else:
                cost_term = np.ones(len(masks))
                meets_cost = count == 0
            value = weights.w1 * quality.sum(axis=1) + weights.w2 * cost_term
            values += np.where(meets_quality & meets_cost, value, 0.0)

        values[~ok] = -np.inf
        i = int(np.argmax(values))
        if best_value is None or values[i] > best_value + 1e-12:
            best_value, best_mask = float(values[i]), int(masks[i])

    if best_value is None or best_value == -np.inf:
        return None, None
    pairs = [(worker_ids[c // T], tasks[c % T].id) for c in range(k) if best_mask >> c & 1]
    return best_value, pairs


def brute_force_program(program) -> tuple:
    """Best (objective, values) of a small program by enumerating every variable domain."""
    domains = [range(v.lower, v.upper + 1) for v in program.variables]
    best = None
    for values in itertools.product(*domains):
        values = list(values)
        if not program.is_feasible(values):
            continue
        value = program.evaluate(values)
        if best is None or value > best[0] + 1e-12:
            best = (value, values)
    return best if best is not None else (None, None)


def best_subset_value(pool, score) -> tuple:
    """Max of score(subset) over every subset of pool."""
    best = (score(frozenset()), frozenset())
    for r in range(1, len(pool) + 1):
        for subset in itertools.combinations(sorted(pool), r):
            value = score(frozenset(subset))
            if value > best[0] + 1e-12:
                best = (value, frozenset(subset))
    return best


def random_instance(rng: np.random.Generator, workers: int, tasks: int, skills: int = 1,
                    constraints: ConstraintConfig = ConstraintConfig(0, 1),
                    weights: Optional[ObjectiveWeights] = None, zero_thresholds: bool = False,
                    loose_cost: bool = False) -> Instance:
    """
    Small random instance for oracle comparisons.

    Args:
        zero_thresholds: every quality threshold 0
        loose_cost: every max cost at least the roster's total expected wage
    """
    roster = as_roster(
        WorkerProfile(id=u, skills=tuple(rng.uniform(0, 1, skills).tolist()), wage=float(rng.uniform(0, 1)),
                      acceptance_ratio=float(rng.uniform(0.2, 1)))
        for u in range(workers)
    )
    total_wage = sum(w.expected_wage for w in roster.values())
    specs = []
    for t in range(tasks):
        thresholds = np.zeros(skills) if zero_thresholds else rng.uniform(0, 0.8, skills) * (rng.random(skills) < 0.8)
        max_cost = total_wage + float(rng.uniform(0, 1)) if loose_cost else float(rng.uniform(0.1, 1.5))
        specs.append(TaskSpec(id=t, quality_thresholds=tuple(thresholds.tolist()), max_cost=max_cost))
    if weights is None:
        weights = ObjectiveWeights.from_w1(float(rng.uniform(0, 1)))
    return Instance(roster, Workload(tasks=tuple(specs), skill_count=skills), constraints, weights)
