"""
Test SmartCrowd exact solver: golden example, oracle equivalence, maintenance programs, LP export
"""
import time

import numpy as np
import pytest

from brute_force import brute_force_optimum, brute_force_program, random_instance
from crowd_model import (
    AssignmentState, ConstraintConfig, Event, WorkerProfile, as_roster, load_example_instance,
)
from cdex_solver import (
    ProgramError, apply_solution, build_addition_program, build_deletion_program, build_design_program,
    build_online_program, build_replacement_program, build_update_program, design_exact, handle_event,
    solve, to_lp,
)
from task_value import check_constraints, global_value

ORACLE_INSTANCES = 500
MAINTENANCE_INSTANCES = 40


def test_golden_example():
    instance = load_example_instance()
    started = time.perf_counter()
    state, result = design_exact(instance.workers, instance.workload, instance.constraints, instance.weights)
    assert time.perf_counter() - started < 5
    assert result.status == "optimal" and result.proven_optimal

    oracle, _ = brute_force_optimum(instance.workers, instance.workload, instance.constraints, instance.weights)
    assert result.objective == pytest.approx(oracle, abs=1e-9)
    assert result.objective >= 1.971 - 1e-6
    assert abs(result.objective - 1.98) <= 0.05

    v = global_value(state, instance.workload, instance.workers, instance.weights)
    assert v == pytest.approx(result.objective, abs=1e-9)
    assert check_constraints(state, instance.workload, instance.workers, instance.constraints) == []
    assert set(state.indexes) == {0, 1, 2}

    t0 = state.indexes[0]
    assert t0.assigned_workers == frozenset({0, 1, 5})
    assert t0.expected_quality[0] == pytest.approx(0.74, abs=0.005)
    assert t0.expected_cost == pytest.approx(0.575, abs=0.005)
    assert t0.value == pytest.approx(0.60, abs=0.01)


def test_oracle_equivalence():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(ORACLE_INSTANCES):
        n = int(rng.integers(1, 6))
        T = int(rng.integers(1, 5))
        x_l = int(rng.integers(0, 2)) if T >= 1 else 0
        x_h = int(rng.integers(max(1, x_l), 3))
        instance = random_instance(rng, n, T, skills=int(rng.integers(1, 3)), constraints=ConstraintConfig(x_l, x_h))
        oracle, _ = brute_force_optimum(instance.workers, instance.workload, instance.constraints, instance.weights)
        program = build_design_program(instance.workers, instance.workload, instance.constraints, instance.weights)
        result = solve(program)
        if oracle is None:
            assert result.status == "infeasible"
            continue
        assert result.status == "optimal"
        assert result.objective == pytest.approx(oracle, abs=1e-7)
        assert program.is_feasible(result.assignment)
        checked += 1
    assert checked > ORACLE_INSTANCES // 2


def test_incumbent_and_budget():
    instance = load_example_instance()
    program = build_design_program(instance.workers, instance.workload, instance.constraints, instance.weights)
    capped = solve(program, budget=3)
    assert capped.status in ("feasible", "budget_exhausted")
    assert not capped.proven_optimal

    full = solve(program)
    warm = solve(program, incumbent=full.assignment)
    assert warm.objective == pytest.approx(full.objective)
    assert warm.nodes <= full.nodes


def test_bad_incumbent_is_ignored():
    instance = load_example_instance()
    program = build_design_program(instance.workers, instance.workload, instance.constraints, instance.weights)
    result = solve(program, incumbent=[1] * program.variable_count)
    assert result.status == "optimal"


def test_structural_errors():
    instance = load_example_instance()
    with pytest.raises(ProgramError):
        build_design_program(instance.workers, instance.workload, ConstraintConfig(4, 4), instance.weights)
    with pytest.raises(ProgramError):
        build_design_program(instance.workers, instance.workload, ConstraintConfig(2, 1), instance.weights)


def test_unmeetable_owner_bounds_are_infeasible():
    instance = load_example_instance()
    freeze = {(0, t): 0 for t in instance.workload.task_ids}
    program = build_design_program(instance.workers, instance.workload, instance.constraints, instance.weights,
                                   freeze=freeze)
    result = solve(program)
    assert result.status == "infeasible"
    assert result.assignment is None


def test_program_summary():
    instance = load_example_instance()
    program = build_design_program(instance.workers, instance.workload, instance.constraints, instance.weights)
    summary = program.summary()
    assert summary["variables"] == 18
    assert summary["task_rows"] == 6
    assert summary["frozen"] == 0


def test_lp_export():
    instance = load_example_instance()
    program = build_design_program(instance.workers, instance.workload, instance.constraints, instance.weights)
    text = to_lp(program)
    lines = text.splitlines()
    assert lines[1] == "Maximize"
    assert lines[-1] == "End"
    for name in ("q_t0_s0:", "c_t0:", "v_t0:", "m_t0:", "lo_w0:", "hi_w0:"):
        assert any(line.strip().startswith(name) for line in lines), name
    binaries = lines[lines.index("Binary") + 1:lines.index("End")]
    assert len(binaries) == 18 + 3
    assert " w5_t2" in binaries


# ============================================================
# Maintenance programs against frozen full re-solves
# ============================================================

def frozen_design(state: AssignmentState, roster, workload, free_pairs) -> dict:
    freeze = {}
    for u in roster:
        for t in workload.task_ids:
            if (u, t) in free_pairs:
                continue
            freeze[(u, t)] = 1 if u in state.task_workers.get(t, ()) else 0
    return freeze


def assert_matches_frozen_resolve(program, state, roster, workload, constraints, weights, free_pairs):
    assert len(program.variables) <= 12
    marginal = solve(program)
    freeze = frozen_design(state, roster, workload, free_pairs)
    full = solve(build_design_program(roster, workload, constraints, weights, freeze=freeze))
    oracle, _ = brute_force_optimum(roster, workload, constraints, weights, freeze=freeze)
    program_oracle, _ = brute_force_program(program)
    if program.variables:
        assert marginal.status == "optimal"
    else:
        assert marginal.status in ("optimal", "no_candidates")
    assert marginal.objective == pytest.approx(full.objective, abs=1e-9)
    assert marginal.objective == pytest.approx(oracle, abs=1e-9)
    assert marginal.objective == pytest.approx(program_oracle, abs=1e-9)
    return marginal


def maintenance_cases():
    rng = np.random.default_rng(11)
    constraints = ConstraintConfig(0, 2)
    for _ in range(MAINTENANCE_INSTANCES):
        instance = random_instance(rng, 4, 3, constraints=constraints)
        state, _ = design_exact(instance.workers, instance.workload, constraints, instance.weights)
        yield rng, instance, state


def test_replacement_matches_frozen_resolve():
    for rng, instance, state in maintenance_cases():
        pairs = state.pairs()
        if not pairs:
            continue
        u, t = pairs[int(rng.integers(len(pairs)))]
        roster, workload, constraints = instance.workers, instance.workload, instance.constraints
        program = build_replacement_program(state, t, [u], roster, roster, workload, instance.weights, constraints)
        base = state.copy()
        base.release(u, t)
        members = state.workers_of(t)
        free = {(c, t) for c in roster if c != u and c not in members and state.load_of(c) < constraints.x_h}
        assert {(v.owner, v.task) for v in program.variables} == free
        marginal = assert_matches_frozen_resolve(program, base, roster, workload, constraints, instance.weights,
                                                 free)
        new_state = apply_solution(program, marginal)
        assert u not in new_state.workers_of(t)
        assert all(new_state.load_of(c) <= constraints.x_h for c in roster)


def test_addition_matches_frozen_resolve():
    for rng, instance, state in maintenance_cases():
        newcomer = WorkerProfile(id=4, skills=(float(rng.uniform()),), wage=float(rng.uniform()),
                                 acceptance_ratio=float(rng.uniform(0.2, 1)))
        roster = as_roster(list(instance.workers.values()) + [newcomer])
        program = build_addition_program(state, [newcomer], instance.workers, instance.workload, instance.weights,
                                         instance.constraints)
        free = {(4, t) for t in instance.workload.task_ids}
        base = state.copy()
        base.add_worker(4)
        assert_matches_frozen_resolve(program, base, roster, instance.workload, instance.constraints,
                                      instance.weights, free)


def test_deletion_matches_frozen_resolve():
    for rng, instance, state in maintenance_cases():
        d = int(rng.integers(4))
        roster = {u: w for u, w in instance.workers.items() if u != d}
        affected = state.tasks_of(d)
        program = build_deletion_program(state, [d], instance.workers, instance.workload, instance.weights,
                                         instance.constraints)
        base = state.copy()
        base.remove_worker(d)
        free = {(c, t) for t in affected for c in roster
                if c not in state.workers_of(t) and state.load_of(c) < instance.constraints.x_h}
        assert {(v.owner, v.task) for v in program.variables} == free
        assert_matches_frozen_resolve(program, base, roster, instance.workload, instance.constraints,
                                      instance.weights, free)


def test_update_matches_frozen_resolve():
    for rng, instance, state in maintenance_cases():
        u = int(rng.integers(4))
        old = instance.workers[u]
        updated = WorkerProfile(id=u, skills=(float(rng.uniform()),), wage=old.wage,
                                acceptance_ratio=float(rng.uniform(0.2, 1)))
        roster = dict(instance.workers)
        roster[u] = updated
        program = build_update_program(state, [updated], instance.workers, instance.workload, instance.weights,
                                       instance.constraints)
        base = state.copy()
        for t in state.tasks_of(u):
            base.release(u, t)
        free = {(u, t) for t in instance.workload.task_ids}
        assert_matches_frozen_resolve(program, base, as_roster(roster), instance.workload, instance.constraints,
                                      instance.weights, free)


def test_online_program_skips_offered_pairs():
    instance = load_example_instance()
    state = AssignmentState.empty(instance.workers, instance.workload.task_ids)
    offered = {(0, 0), (1, 0)}
    program = build_online_program(state, [0, 1, 2], [0, 1], instance.workers, instance.workload,
                                   instance.weights, instance.constraints, exclude=offered)
    pairs = {(v.owner, v.task) for v in program.variables}
    assert pairs == {(0, 1), (1, 1), (2, 0), (2, 1)}
    assert all(bounds == (0, 2) for bounds in program.owner_bounds.values())


# ============================================================
# Event handling on the running example
# ============================================================

def test_decline_keeps_other_pairs():
    instance = load_example_instance()
    state, _ = design_exact(instance.workers, instance.workload, instance.constraints, instance.weights)
    decliner = min(state.workers_of(0))
    event = Event(kind="decline", worker_ids=(decliner,), task_id=0)
    new_state, roster, result = handle_event(state, event, instance.workers, instance.workload,
                                             instance.constraints, instance.weights)
    assert result.status == "optimal"
    assert decliner not in new_state.workers_of(0)
    kept = [p for p in state.pairs() if p != (decliner, 0)]
    assert set(kept) <= set(new_state.pairs())
    assert all(new_state.load_of(u) <= 2 for u in roster)


def test_decline_without_spare_capacity_reports_no_candidates():
    instance = load_example_instance()
    constraints = ConstraintConfig(0, 1)
    pairs = [(0, 0), (1, 0), (2, 1), (3, 1), (4, 2), (5, 2)]
    state = AssignmentState.from_pairs(pairs, instance.workers, instance.workload.task_ids)
    event = Event(kind="decline", worker_ids=(0,), task_id=0)
    new_state, _, result = handle_event(state, event, instance.workers, instance.workload,
                                        constraints, instance.weights)
    assert result.status == "no_candidates"
    assert not result.proven_optimal
    assert 0 in result.infeasible_tasks
    assert new_state.workers_of(0) == frozenset({1})
    assert set(new_state.pairs()) == set(pairs) - {(0, 0)}

    program = build_replacement_program(state, 0, [0], [], instance.workers, instance.workload,
                                        instance.weights, instance.constraints)
    assert program.variables == []
    assert solve(program).status == "no_candidates"


def test_add_then_delete_restores_value():
    instance = load_example_instance()
    state, result = design_exact(instance.workers, instance.workload, instance.constraints, instance.weights)
    v0 = result.objective
    newcomer = WorkerProfile(id=6, skills=(0.45,), wage=0.3, acceptance_ratio=0.8)

    state, roster, added = handle_event(state, Event(kind="add", workers=(newcomer,)), instance.workers,
                                        instance.workload, instance.constraints, instance.weights)
    assert 6 in roster
    assert global_value(state, instance.workload, roster, instance.weights) >= v0 - 1e-9

    state, roster, _ = handle_event(state, Event(kind="delete", worker_ids=(6,)), roster,
                                    instance.workload, instance.constraints, instance.weights)
    assert 6 not in roster
    assert global_value(state, instance.workload, roster, instance.weights) == pytest.approx(v0, abs=1e-9)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
