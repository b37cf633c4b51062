"""
Test SmartCrowd task value, global objective and constraint checks
"""
from dataclasses import replace

import pytest

from crowd_model import AssignmentState, ObjectiveWeights, TaskSpec, UnknownWorkerError, load_example_instance
from task_value import (
    build_index, check_constraints, expected_aggregates, global_value, index_errors, refresh_indexes,
    task_value, unconstrained_global_value,
)

# the allocation printed with the running example: t1 {u1,u2,u6}, t2 {u2,u4,u5}, t3 {u3,u4,u5,u6}
PRINTED_ALLOCATION = [(0, 0), (1, 0), (5, 0), (1, 1), (3, 1), (4, 1), (2, 2), (3, 2), (4, 2), (5, 2)]


def example_state():
    instance = load_example_instance()
    state = AssignmentState.from_pairs(PRINTED_ALLOCATION, instance.workers, instance.workload.task_ids)
    return instance, state


def test_t1_index_from_u1_u2_u6():
    instance = load_example_instance()
    index = build_index({0, 1, 5}, instance.workload.task(0), instance.workers, instance.weights)
    assert index.expected_quality[0] == pytest.approx(0.74)
    assert index.expected_cost == pytest.approx(0.575)
    assert index.value == pytest.approx(0.6038, abs=1e-4)
    assert index.to_dict()["workers"] == [0, 1, 5]


def test_t3_value():
    instance = load_example_instance()
    b = task_value({2, 3, 4, 5}, instance.workload.task(2), instance.workers, instance.weights)
    assert b.feasible
    assert b.expected_quality[0] == pytest.approx(1.15)
    assert b.expected_cost == pytest.approx(1.13)
    assert b.value == pytest.approx(0.7925)


def test_quality_shortfall_zeroes_value():
    instance = load_example_instance()
    b = task_value({1, 3, 4}, instance.workload.task(1), instance.workers, instance.weights)
    assert b.expected_quality[0] == pytest.approx(0.75)
    assert not b.feasible
    assert b.value == 0.0
    assert b.unconstrained_value == pytest.approx(0.375 + 0.5 * (1 - 0.705 / 1.1))


def test_cost_overrun_zeroes_value():
    instance = load_example_instance()
    b = task_value({3, 5}, instance.workload.task(0), instance.workers, instance.weights)
    assert b.expected_cost == pytest.approx(0.71)
    b = task_value({1, 2, 3, 5}, instance.workload.task(0), instance.workers, instance.weights)
    assert b.expected_cost > 1.08
    assert b.value == 0.0


def test_printed_allocation_global_value():
    instance, state = example_state()
    v = global_value(state, instance.workload, instance.workers, instance.weights)
    assert v == pytest.approx(0.603796 + 0.7925, abs=1e-5)
    unconstrained = unconstrained_global_value(state, instance.workload, instance.workers, instance.weights)
    assert unconstrained == pytest.approx(1.95, abs=0.005)


def test_printed_allocation_violates_t2_quality():
    instance, state = example_state()
    violations = check_constraints(state, instance.workload, instance.workers, instance.constraints)
    assert len(violations) == 1
    assert violations[0].startswith("task 1: quality")


def test_empty_task_is_unserved_not_violated():
    instance = load_example_instance()
    state = AssignmentState.from_pairs([(u, 2) for u in range(6)], instance.workers, instance.workload.task_ids)
    violations = check_constraints(state, instance.workload, instance.workers, instance.constraints)
    assert not any(v.startswith("task 0") or v.startswith("task 1") for v in violations)


def test_load_bounds_reported():
    instance = load_example_instance()
    state = AssignmentState.from_pairs([(0, 0), (0, 1), (0, 2)], instance.workers, instance.workload.task_ids)
    violations = check_constraints(state, instance.workload, instance.workers, instance.constraints)
    assert "worker 0: 3 tasks exceeds X_h=2" in violations
    assert "worker 1: 0 tasks below X_l=1" in violations


def test_zero_budget_task():
    instance = load_example_instance()
    task = TaskSpec(id=9, quality_thresholds=(0.0,), max_cost=0.0)
    empty = task_value(set(), task, instance.workers, instance.weights)
    assert empty.feasible and empty.cost_term == 1.0 and empty.value == pytest.approx(0.5)
    assert task_value({0}, task, instance.workers, instance.weights).value == 0.0


def test_weights_shift_the_value():
    instance = load_example_instance()
    quality_only = ObjectiveWeights.from_w1(1.0)
    b = task_value({0, 1, 5}, instance.workload.task(0), instance.workers, quality_only)
    assert b.value == pytest.approx(0.74)


def test_unknown_worker_raises():
    instance = load_example_instance()
    with pytest.raises(UnknownWorkerError):
        expected_aggregates({0, 42}, instance.workers)


def test_index_errors_detect_tampering():
    instance, state = example_state()
    indexes = refresh_indexes(state, instance.workload, instance.workers, instance.weights)
    assert index_errors(indexes.values(), instance.workload, instance.workers, instance.weights) == []
    tampered = replace(indexes[0], value=0.9)
    errors = index_errors([tampered], instance.workload, instance.workers, instance.weights)
    assert errors and errors[0].startswith("task 0: stored value")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
