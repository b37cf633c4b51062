"""
Test SmartCrowd simulator: scenario generation, strategy runs, comparisons and CSV output
"""
import logging
import math

import numpy as np
import pytest

from cdex_solver import SolveResult
from crowd_model import InstanceError, TaskSpec, WorkerProfile, Workload, as_roster
from crowd_simulator import (
    CSV_COLUMNS, STRATEGIES, CrowdSimulation, Scenario, SimConfig, accepts, generate_scenario, load_sim_config,
    make_strategy, poisson_times, run_comparison, run_strategy, run_sweep, write_csv,
)

ORDERING_SEEDS = range(20)


def desk(**overrides) -> SimConfig:
    return SimConfig.desk(**overrides)


def test_scenario_is_reproducible():
    config = desk(seed=4)
    assert generate_scenario(config).to_dict() == generate_scenario(config).to_dict()
    assert generate_scenario(config).to_dict() != generate_scenario(desk(seed=5)).to_dict()


def test_poisson_arrival_count():
    rng = np.random.default_rng(0)
    counts = [len(poisson_times(rng, 20.0, 10.0)) for _ in range(5)]
    for c in counts:
        assert abs(c - 200) <= 4 * math.sqrt(200)

    config = desk(duration=10.0, workload_size=1000, task_rate=20.0)
    arrivals = generate_scenario(config).task_arrivals
    assert abs(len(arrivals) - 200) <= 4 * math.sqrt(200)
    times = [t for t, _ in arrivals]
    assert times == sorted(times)
    assert [k for _, k in arrivals] == list(range(len(arrivals)))


def test_workload_respects_limit_and_shape():
    scenario = generate_scenario(desk())
    assert len(scenario.task_arrivals) <= 20
    for task in scenario.workload:
        assert sum(1 for q in task.quality_thresholds if q > 0) == 1
        assert task.max_cost > 0
    for w in scenario.workers.values():
        assert all(0.0 <= s <= 1.0 for s in w.skills)
        assert 0.0 <= w.wage <= 1.0 and 0.0 <= w.acceptance_ratio <= 1.0


def test_skills_per_task():
    scenario = generate_scenario(desk(skills_per_task=3))
    for task in scenario.workload:
        assert sum(1 for q in task.quality_thresholds if q > 0) == 3


def test_config_errors_are_reported_together():
    with pytest.raises(InstanceError) as err:
        load_sim_config(None, skill_variance=-1.0, w1=0.9, duration=-5)
    message = str(err.value)
    assert "skill_variance" in message
    assert "duration" in message
    with pytest.raises(InstanceError):
        load_sim_config(None, skills_per_task=12)


def test_acceptance_draws_are_shared():
    assert accepts(3, 10, 4, 0.5) == accepts(3, 10, 4, 0.5)
    assert not accepts(3, 10, 4, 0.0)
    assert accepts(3, 10, 4, 1.0)


def test_duration_zero_gives_empty_report():
    config = desk(duration=0)
    scenario = generate_scenario(config)
    for name in STRATEGIES:
        report = run_strategy(name, scenario, config)
        assert report.samples == []
        assert report.rows() == []


def test_every_strategy_runs_and_keeps_invariants():
    config = desk(seed=1)
    scenario = generate_scenario(config)
    for name in STRATEGIES:
        sim = CrowdSimulation(scenario, config, check_invariants=True)
        report = sim.run(make_strategy(name))
        assert len(report.samples) == config.sample_count
        last = report.final
        assert last.time == pytest.approx(config.duration)
        assert 0.0 <= last.fraction_successful <= 1.0
        assert last.tasks_arrived == len(scenario.task_arrivals)
        assert last.tasks_successful == len(sim.success_time)
        for t, at in sim.success_time.items():
            assert at >= sim.arrival_time[t]
        if last.tasks_successful == 0:
            assert last.avg_end_to_end == 0.0
        arrived = [s.tasks_arrived for s in report.samples]
        assert arrived == sorted(arrived)


def test_unknown_strategy():
    with pytest.raises(ValueError):
        make_strategy("Oracle")


def test_zero_acceptance_means_no_success():
    config = desk(acceptance_mean=0.0, acceptance_variance=0.0, seed=2)
    scenario = generate_scenario(config)
    for name in STRATEGIES:
        report = run_strategy(name, scenario, config)
        assert report.final.tasks_successful == 0
        assert report.final.normalized_objective == 0.0


def test_comparison_is_deterministic(tmp_path):
    config = desk(seed=3)
    first = run_comparison(STRATEGIES, config, seeds=[3])
    second = run_comparison(STRATEGIES, config, seeds=[3], max_workers=3)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(first, a)
    write_csv(second, b)
    assert a.read_bytes() == b.read_bytes()

    lines = a.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 1 + len(STRATEGIES) * config.sample_count
    times = {s: [row.split(",")[2] for row in lines[1:] if row.startswith(s + ",")] for s in STRATEGIES}
    assert len({tuple(v) for v in times.values()}) == 1


def test_same_strategy_twice_gives_identical_rows():
    config = desk(seed=6)
    a, b = run_comparison(["OnlineGreedy", "OnlineGreedy"], config)
    assert a.rows() == b.rows()


def test_desk_scale_ordering():
    config = desk()
    names = ["CDex", "OfflineOnlineCDexApprox", "CDexPlus", "OnlineGreedy", "Benchmark"]
    reports = run_comparison(names, config, seeds=ORDERING_SEEDS)
    fraction = {}
    objective = {}
    for r in reports:
        fraction.setdefault(r.strategy, []).append(r.final.fraction_successful)
        objective.setdefault(r.strategy, []).append(r.final.normalized_objective)
    mean_fraction = {k: float(np.mean(v)) for k, v in fraction.items()}
    mean_objective = {k: float(np.mean(v)) for k, v in objective.items()}
    assert mean_fraction["CDex"] >= mean_fraction["OnlineGreedy"] >= mean_fraction["Benchmark"], mean_fraction
    for name in ("CDex", "OfflineOnlineCDexApprox", "CDexPlus"):
        assert mean_objective[name] > mean_objective["Benchmark"], mean_objective


def test_acceptance_sweep_is_monotone():
    config = desk()
    tagged = run_sweep("acceptance_mean", [0.2, 0.5, 0.8], ["OfflineOnlineCDexApprox"], config, seeds=range(5))
    means = []
    for value in (0.2, 0.5, 0.8):
        means.append(float(np.mean([r.final.fraction_successful for v, r in tagged if v == value])))
    assert means[0] <= means[1] + 0.05
    assert means[1] <= means[2] + 0.05


def test_sweep_csv_has_leading_column(tmp_path):
    config = desk(duration=10.0)
    tagged = run_sweep("task_rate", [10.0, 20.0], ["Benchmark"], config)
    path = tmp_path / "sweep.csv"
    write_csv([], path, extra=("param_value", tagged))
    lines = path.read_text().splitlines()
    assert lines[0] == "param_value," + ",".join(CSV_COLUMNS)
    assert lines[1].startswith("10.0,Benchmark,0,")
    assert len(lines) == 1 + 2 * config.sample_count
    with pytest.raises(ValueError):
        run_sweep("duration", [1.0], ["Benchmark"], config)


def test_provable_regime_preset():
    config = desk(provable_regime=True)
    assert config.weights.w2 == 0.0 and config.constraints.x_l == 0
    scenario = generate_scenario(config)
    assert all(q == 0.0 for t in scenario.workload for q in t.quality_thresholds)
    report = run_strategy("OfflineOnlineCDexApprox", scenario, config)
    assert report.final.tasks_successful > 0


def pool_simulation(workers, max_cost=0.3, **overrides):
    roster = as_roster(workers)
    workload = Workload(tasks=(TaskSpec(0, (0.5,), max_cost),), skill_count=1)
    config = desk(skill_count=1, **overrides)
    sim = CrowdSimulation(Scenario(0, roster, workload, [], []), config)
    sim.arrival_time[0] = 0.0
    sim.holdings.task_workers.setdefault(0, set())
    sim.pending.append(0)
    for u in roster:
        sim.online_until[u] = 100.0
    return sim


def test_candidate_pool_skips_unaffordable_and_unskilled_workers():
    pricey = [WorkerProfile(u, (1.0,), 0.9, 1.0) for u in range(12)]
    affordable = WorkerProfile(12, (0.2,), 0.25, 1.0)
    unskilled = WorkerProfile(13, (0.0,), 0.01, 1.0)
    sim = pool_simulation(pricey + [affordable, unskilled], replacement_pool_limit=10)
    assert sim.candidate_pool(0) == [12]


def test_index_strategy_offers_pending_tasks_to_arriving_workers():
    sim = pool_simulation([WorkerProfile(0, (0.6,), 0.2, 1.0)])
    strategy = make_strategy("OfflineOnlineCDexApprox")
    strategy.on_worker_arrival(sim, 0)
    assert (0, 0) in sim.offered


def test_only_budget_cut_solves_count_as_timeouts():
    sim = pool_simulation([WorkerProfile(0, (0.6,), 0.2, 1.0)])
    for status, proven in (("optimal", True), ("infeasible", False), ("no_candidates", False),
                           ("feasible", False), ("budget_exhausted", False)):
        sim.record_solve(SolveResult(status, None, 0.0, 0, proven, 0.0, 0.0))
    assert sim.timeouts == 2


def test_short_duration_warns_about_unreleased_tasks():
    records = []
    handler = logging.Handler()
    handler.emit = records.append
    log = logging.getLogger("crowd_simulator")
    log.addHandler(handler)
    try:
        short = generate_scenario(desk(duration=0.5, task_rate=2.0))
        warned = [r.getMessage() for r in records if r.levelno == logging.WARNING]
        assert len(short.task_arrivals) < 20
        assert any("of 20 tasks arrive within duration" in m for m in warned)

        records.clear()
        full = generate_scenario(desk())
        assert len(full.task_arrivals) == 20
        assert not [r for r in records if r.levelno == logging.WARNING]
    finally:
        log.removeHandler(handler)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as d:
                    fn(Path(d))
            else:
                fn()
            print(f"✅ {name}")
