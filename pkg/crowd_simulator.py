"""
SmartCrowd - Crowd Simulator
Discrete-event comparison of assignment strategies under Poisson arrivals
"""
import csv
import heapq
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from crowd_model import (
    AssignmentState, ConstraintConfig, Event, InstanceError, ObjectiveWeights,
    SmartCrowdError, TOLERANCE, TaskSpec, WorkerProfile, Workload, as_roster,
)
from cdex_solver import (
    build_online_program, build_replacement_program, design_exact, solve,
)
from greedy_assign import TaskAggregate, marginal_key, offline_greedy_design, online_greedy_replace
from task_value import task_value
from virtual_workers import alpha_from_percentile, build_cdex_plus, maintain_cdex_plus

logger = logging.getLogger(__name__)

STRATEGIES = ("Benchmark", "OnlineGreedy", "OnlineOptimal", "CDex", "OfflineOnlineCDexApprox", "CDexPlus")
INDEX_STRATEGIES = ("CDex", "OfflineOnlineCDexApprox", "CDexPlus")
CSV_COLUMNS = ["strategy", "seed", "time", "tasks_arrived", "tasks_successful", "fraction_successful",
               "normalized_objective", "avg_end_to_end", "solver_timeouts"]

# named random streams; appending a name never shifts the others
STREAMS = {"scenario": 0, "arrivals": 1, "sessions": 2, "acceptance": 3}

EFFICIENCY_FLOOR = 1e-6
# task scale and factors stay positive so a required skill always has a positive threshold
FACTOR_FLOOR = 1e-3


class SimulationError(SmartCrowdError):
    """An invariant of the running simulation was broken."""


class SimConfig(BaseModel):
    """
    Simulator parameters. Variances are of the normal generators; samples are
    clamped into their legal ranges.

    Tasks arrive at task_rate until workload_size have arrived or duration
    ends, whichever comes first; a short duration releases only part of the
    workload and generate_scenario logs a warning.
    """
    model_config = ConfigDict(extra="forbid")

    duration: float = Field(14400.0, ge=0)
    worker_count: int = Field(10000, gt=0)
    skill_count: int = Field(10, gt=0)
    skills_per_task: int = Field(1, gt=0)

    skill_mean: float = 0.5
    skill_variance: float = Field(0.15, ge=0)
    wage_mean: float = 0.5
    wage_variance: float = Field(0.2, ge=0)
    acceptance_mean: float = 0.5
    acceptance_variance: float = Field(0.1, ge=0)

    task_scale_mean: float = 15.0
    task_scale_variance: float = Field(3.0, ge=0)
    threshold_factor_mean: float = 0.7
    threshold_factor_variance: float = Field(0.15, ge=0)
    cost_factor_mean: float = 0.5
    cost_factor_variance: float = Field(0.2, ge=0)

    w1: float = Field(0.5, ge=0, le=1)
    w2: float = Field(0.5, ge=0, le=1)
    tasks_per_worker_min: int = Field(0, ge=0)
    tasks_per_worker_max: int = Field(2, gt=0)

    worker_rate: float = Field(10.0, gt=0)
    task_rate: float = Field(20.0, gt=0)
    workload_size: int = Field(10000, gt=0)
    session_mean: float = Field(30.0, gt=0)
    task_duration: float = Field(30.0, gt=0)
    sample_count: int = Field(10, gt=0)
    retry_interval: float = Field(1.0, gt=0)

    benchmark_prefilter: float = Field(0.1, ge=0)
    alpha_percentile: float = Field(20.0, ge=0, le=100)
    replacement_pool_limit: int = Field(12, gt=0)
    index_node_budget: int = Field(20000, gt=0)
    online_node_budget: int = Field(5000, gt=0)
    replacement_node_budget: int = Field(2000, gt=0)

    provable_regime: bool = False
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self):
        problems = []
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            problems.append(f"w1 + w2 must be 1 (got {self.w1} + {self.w2})")
        if self.skills_per_task > self.skill_count:
            problems.append(f"skills_per_task {self.skills_per_task} exceeds skill_count {self.skill_count}")
        if self.tasks_per_worker_min > self.tasks_per_worker_max:
            problems.append("tasks_per_worker_min exceeds tasks_per_worker_max")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    @classmethod
    def desk(cls, **overrides) -> "SimConfig":
        """Desk-scale preset: 60 time units, 50 workers, 20 tasks."""
        values = dict(
            duration=60.0, worker_count=50, workload_size=20,
            task_scale_mean=1.5, task_scale_variance=0.3,
            retry_interval=2.0, replacement_pool_limit=10,
            index_node_budget=20000, online_node_budget=2000, replacement_node_budget=1000,
        )
        values.update(overrides)
        return cls(**values)

    @property
    def weights(self) -> ObjectiveWeights:
        if self.provable_regime:
            return ObjectiveWeights(1.0, 0.0)
        return ObjectiveWeights(self.w1, self.w2)

    @property
    def constraints(self) -> ConstraintConfig:
        x_l = 0 if self.provable_regime else self.tasks_per_worker_min
        return ConstraintConfig(x_l, self.tasks_per_worker_max)

    @property
    def sample_interval(self) -> float:
        return self.duration / self.sample_count


def load_sim_config(path=None, **overrides) -> SimConfig:
    """Config from an optional JSON file with keyword overrides; every problem is reported at once."""
    data = {}
    if path is not None:
        try:
            with open(path) as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise InstanceError(f"{path}: not valid JSON ({e})") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimConfig(**data)
    except ValidationError as e:
        raise InstanceError(f"invalid simulator config:\n{e}") from e


def stream(seed: int, name: str, *keys) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name], *keys])


def accepts(seed: int, worker_id: int, task_id: int, acceptance_ratio: float) -> bool:
    """One acceptance draw per (worker, task) offer, identical for every strategy."""
    return bool(stream(seed, "acceptance", worker_id, task_id).random() < acceptance_ratio)


def poisson_times(rng: np.random.Generator, rate: float, horizon: float, limit: Optional[int] = None) -> np.ndarray:
    """Arrival times of a Poisson process on [0, horizon), at most `limit` of them."""
    times = []
    t = 0.0
    batch = max(16, int(rate * horizon * 1.2) + 16)
    while True:
        gaps = rng.exponential(1.0 / rate, size=batch)
        for g in gaps:
            t += g
            if t >= horizon or (limit is not None and len(times) >= limit):
                return np.array(times)
            times.append(t)


def _clamped_normal(rng, mean, variance, size, low=0.0, high=1.0):
    return np.clip(rng.normal(mean, math.sqrt(variance), size=size), low, high)


@dataclass
class Scenario:
    seed: int
    workers: dict
    workload: Workload
    task_arrivals: list
    worker_arrivals: list

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "workers": [w.to_dict() for w in self.workers.values()],
            "tasks": [t.to_dict() for t in self.workload],
            "task_arrivals": [[round(t, 12), k] for t, k in self.task_arrivals],
            "worker_arrivals": [[round(t, 12), u, round(s, 12)] for t, u, s in self.worker_arrivals],
        }


def generate_workers(config: SimConfig, rng: np.random.Generator) -> dict:
    n, m = config.worker_count, config.skill_count
    skills = _clamped_normal(rng, config.skill_mean, config.skill_variance, (n, m))
    wages = _clamped_normal(rng, config.wage_mean, config.wage_variance, n)
    ratios = _clamped_normal(rng, config.acceptance_mean, config.acceptance_variance, n)
    return as_roster(
        WorkerProfile(id=i, skills=tuple(skills[i].tolist()), wage=float(wages[i]), acceptance_ratio=float(ratios[i]))
        for i in range(n)
    )


def generate_workload(config: SimConfig, rng: np.random.Generator) -> Workload:
    m = config.skill_count
    tasks = []
    for k in range(config.workload_size):
        scale = max(FACTOR_FLOOR, rng.normal(config.task_scale_mean, math.sqrt(config.task_scale_variance)))
        chosen = rng.choice(m, size=config.skills_per_task, replace=False)
        thresholds = np.zeros(m)
        factors = np.clip(rng.normal(config.threshold_factor_mean, math.sqrt(config.threshold_factor_variance),
                                     size=config.skills_per_task), FACTOR_FLOOR, None)
        thresholds[chosen] = scale * factors
        cost_factor = max(FACTOR_FLOOR, rng.normal(config.cost_factor_mean, math.sqrt(config.cost_factor_variance)))
        if config.provable_regime:
            thresholds[:] = 0.0
        tasks.append(TaskSpec(id=k, quality_thresholds=tuple(thresholds.tolist()), max_cost=scale * cost_factor))
    return Workload(tasks=tuple(tasks), skill_count=m)


def generate_scenario(config: SimConfig) -> Scenario:
    """Workers, workload and arrival schedule, all reproducible from config.seed."""
    rng = stream(config.seed, "scenario")
    workers = generate_workers(config, rng)
    workload = generate_workload(config, rng)

    arrivals = stream(config.seed, "arrivals")
    task_times = poisson_times(arrivals, config.task_rate, config.duration, limit=config.workload_size)
    task_arrivals = [(float(t), k) for k, t in enumerate(task_times)]
    if len(task_arrivals) < config.workload_size:
        logger.warning(f"Only {len(task_arrivals)} of {config.workload_size} tasks arrive within duration "
                       f"{config.duration}; the rest are never released")

    worker_times = poisson_times(arrivals, config.worker_rate, config.duration)
    sessions = stream(config.seed, "sessions")
    picks = sessions.integers(0, config.worker_count, size=len(worker_times))
    lengths = sessions.exponential(config.session_mean, size=len(worker_times))
    worker_arrivals = [(float(t), int(u), float(s)) for t, u, s in zip(worker_times, picks, lengths)]

    logger.info(f"Scenario seed {config.seed}: {len(workers)} workers, {len(workload)} tasks, "
                f"{len(task_arrivals)} task arrivals, {len(worker_arrivals)} worker arrivals")
    return Scenario(config.seed, workers, workload, task_arrivals, worker_arrivals)


# ============================================================
# Reports
# ============================================================

@dataclass
class SimSample:
    time: float
    tasks_arrived: int
    tasks_successful: int
    fraction_successful: float
    normalized_objective: float
    avg_end_to_end: float
    solver_timeouts: int


@dataclass
class SimReport:
    strategy: str
    seed: int
    samples: list = field(default_factory=list)
    totals: dict = field(default_factory=dict)

    @property
    def final(self) -> Optional[SimSample]:
        return self.samples[-1] if self.samples else None

    def rows(self) -> list:
        return [[self.strategy, self.seed, _fmt(s.time), s.tasks_arrived, s.tasks_successful,
                 _fmt(s.fraction_successful), _fmt(s.normalized_objective), _fmt(s.avg_end_to_end),
                 s.solver_timeouts] for s in self.samples]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_csv(reports: Iterable, path, extra: Optional[tuple] = None):
    """
    One row per (strategy, sample time).

    Args:
        extra: optional (column name, [(value, report), ...]) prepended as a leading column
    """
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        if extra is None:
            writer.writerow(CSV_COLUMNS)
            for report in reports:
                writer.writerows(report.rows())
        else:
            name, tagged = extra
            writer.writerow([name] + CSV_COLUMNS)
            for value, report in tagged:
                writer.writerows([[value] + row for row in report.rows()])


# ============================================================
# Event loop
# ============================================================

class CrowdSimulation:
    """
    One strategy on one scenario.

    holdings tracks accepted (worker, task) pairs of tasks that are open or
    running; a pair leaves only when its task completes.
    """

    COMPLETE, TASK, WORKER, RETRY, SAMPLE = range(5)

    def __init__(self, scenario: Scenario, config: SimConfig, check_invariants: bool = True):
        self.scenario = scenario
        self.config = config
        self.workers = scenario.workers
        self.workload = scenario.workload
        self.tasks = {t.id: t for t in scenario.workload}
        self.weights = config.weights
        self.constraints = config.constraints
        self.check_invariants = check_invariants

        self.now = 0.0
        self.holdings = AssignmentState.empty(self.workers, ())
        self.online_until = {}
        self.offered = set()
        self.accepted = set()
        self.arrival_time = {}
        self.success_time = {}
        self.success_value = {}
        self.pending = []
        self.timeouts = 0
        self.samples = []

        self._queue = []
        self._seq = itertools.count()

    # -- bookkeeping --------------------------------------------------

    def push(self, time, kind, payload=None):
        heapq.heappush(self._queue, (time, kind, next(self._seq), payload))

    def is_pending(self, task_id) -> bool:
        return task_id in self.arrival_time and task_id not in self.success_time

    def is_online(self, worker_id) -> bool:
        return self.online_until.get(worker_id, -1.0) > self.now

    def record_solve(self, result):
        """Count solves cut short by the node or time budget."""
        if result.status in ("feasible", "budget_exhausted"):
            self.timeouts += 1

    def efficiency(self, worker_id, task: TaskSpec) -> float:
        w = self.workers[worker_id]
        skill = sum(w.acceptance_ratio * s for s, q in zip(w.skills, task.quality_thresholds) if q > 0)
        return skill / max(w.expected_wage, EFFICIENCY_FLOOR)

    def candidate_pool(self, task_id) -> list:
        """
        Online workers below X_h who were never offered the task, best skill
        per cost first. Workers with no relevant skill or whose expected wage
        exceeds the task's remaining budget are left out before the pool is cut
        to replacement_pool_limit.
        """
        task = self.tasks[task_id]
        held = self.holdings.task_workers.get(task_id, set())
        residual = task.max_cost - sum(self.workers[u].expected_wage for u in held)
        pool = [u for u, until in self.online_until.items()
                if until > self.now and self.holdings.load_of(u) < self.constraints.x_h
                and (u, task_id) not in self.offered and u not in held
                and self.workers[u].expected_wage <= residual + TOLERANCE
                and self.efficiency(u, task) > 0]
        pool.sort(key=lambda u: (-self.efficiency(u, task), u))
        return sorted(pool[:self.config.replacement_pool_limit])

    def join(self, worker_id, task_id):
        self.holdings.assign(worker_id, task_id)
        self.accepted.add((worker_id, task_id))
        self.check_success(task_id)

    def offer(self, worker_id, task_id) -> bool:
        """Recommend a task to a worker; True when the worker accepts."""
        if not self.is_pending(task_id) or (worker_id, task_id) in self.offered:
            return False
        if self.holdings.load_of(worker_id) >= self.constraints.x_h:
            return False
        self.offered.add((worker_id, task_id))
        if accepts(self.scenario.seed, worker_id, task_id, self.workers[worker_id].acceptance_ratio):
            self.join(worker_id, task_id)
            return True
        return False

    def offer_by_marginal_gain(self, worker_id):
        """Offer open tasks to a worker in marginal utility order until one is accepted."""
        if self.holdings.load_of(worker_id) >= self.constraints.x_h:
            return
        profile = self.workers[worker_id]
        ranked = []
        for t in self.pending:
            if (worker_id, t) in self.offered or worker_id in self.holdings.task_workers[t]:
                continue
            agg = TaskAggregate(self.tasks[t], self.holdings.workers_of(t), self.workers)
            key = marginal_key(agg, profile, self.weights)
            if key is not None:
                ranked.append((-key[0], -key[1], t))
        for _, _, t in sorted(ranked):
            if self.offer(worker_id, t):
                break

    def check_success(self, task_id):
        members = self.holdings.workers_of(task_id)
        if not members or not self.is_pending(task_id):
            return
        breakdown = task_value(members, self.tasks[task_id], self.workers, self.weights)
        if breakdown.feasible:
            self.success_time[task_id] = self.now
            self.success_value[task_id] = breakdown.value
            self.pending.remove(task_id)
            self.push(self.now + self.config.task_duration, self.COMPLETE, task_id)

    def complete(self, task_id):
        for u in sorted(self.holdings.workers_of(task_id)):
            self.holdings.release(u, task_id)
            self.accepted.discard((u, task_id))

    def sample(self):
        arrived = len(self.arrival_time)
        successful = len(self.success_time)
        ends = [self.success_time[t] - self.arrival_time[t] for t in self.success_time]
        self.samples.append(SimSample(
            time=self.now,
            tasks_arrived=arrived,
            tasks_successful=successful,
            fraction_successful=successful / arrived if arrived else 0.0,
            normalized_objective=sum(self.success_value.values()) / arrived if arrived else 0.0,
            avg_end_to_end=float(np.mean(ends)) if ends else 0.0,
            solver_timeouts=self.timeouts,
        ))

    def verify(self):
        for u, t in self.accepted:
            if u not in self.holdings.task_workers.get(t, ()):
                raise SimulationError(f"t={self.now:.3f}: accepted pair ({u}, {t}) was dropped")
        for u, c in self.holdings.load.items():
            if c > self.constraints.x_h:
                raise SimulationError(f"t={self.now:.3f}: worker {u} holds {c} tasks > X_h")

    # -- main loop ----------------------------------------------------

    def run(self, strategy: "Strategy") -> SimReport:
        report = SimReport(strategy=strategy.name, seed=self.scenario.seed)
        if self.config.duration <= 0:
            return report

        strategy.prepare(self)
        for t, k in self.scenario.task_arrivals:
            self.push(t, self.TASK, k)
        for t, u, length in self.scenario.worker_arrivals:
            self.push(t, self.WORKER, (u, length))
        if strategy.uses_retry:
            ticks = int(self.config.duration / self.config.retry_interval)
            for i in range(1, ticks + 1):
                self.push(i * self.config.retry_interval, self.RETRY)
        for i in range(1, self.config.sample_count + 1):
            self.push(i * self.config.sample_interval, self.SAMPLE)

        while self._queue:
            time, kind, _, payload = heapq.heappop(self._queue)
            if time > self.config.duration:
                break
            self.now = time
            if kind == self.COMPLETE:
                self.complete(payload)
            elif kind == self.TASK:
                self.arrival_time[payload] = time
                self.holdings.task_workers.setdefault(payload, set())
                self.pending.append(payload)
                self.pending.sort()
                strategy.on_task_arrival(self, payload)
            elif kind == self.WORKER:
                u, length = payload
                self.online_until[u] = max(self.online_until.get(u, -1.0), time + length)
                strategy.on_worker_arrival(self, u)
            elif kind == self.RETRY:
                strategy.on_retry(self)
            else:
                self.sample()
            if self.check_invariants:
                self.verify()

        report.samples = self.samples
        final = self.samples[-1] if self.samples else None
        report.totals = {
            "tasks_arrived": final.tasks_arrived if final else 0,
            "tasks_successful": final.tasks_successful if final else 0,
            "solver_timeouts": self.timeouts,
        }
        return report


# ============================================================
# Strategies
# ============================================================

class Strategy:
    name = ""
    uses_retry = False

    def prepare(self, sim: CrowdSimulation):
        pass

    def on_task_arrival(self, sim: CrowdSimulation, task_id: int):
        pass

    def on_worker_arrival(self, sim: CrowdSimulation, worker_id: int):
        pass

    def on_retry(self, sim: CrowdSimulation):
        pass


class Benchmark(Strategy):
    """Self-selection: an arriving worker joins the qualifying open task with the most budget left."""
    name = "Benchmark"

    def on_worker_arrival(self, sim, worker_id):
        if sim.holdings.load_of(worker_id) >= sim.constraints.x_h:
            return
        w = sim.workers[worker_id]
        best = None
        for t in sim.pending:
            if (worker_id, t) in sim.offered or worker_id in sim.holdings.task_workers[t]:
                continue
            task = sim.tasks[t]
            if any(q > 0 and s < sim.config.benchmark_prefilter * q for s, q in zip(w.skills, task.quality_thresholds)):
                continue
            members = sim.holdings.workers_of(t)
            spent = sum(sim.workers[u].expected_wage for u in members)
            residual = task.max_cost - spent
            if residual < w.expected_wage:
                continue
            if best is None or residual > best[0] + 1e-12:
                best = (residual, t)
        if best is not None:
            sim.offered.add((worker_id, best[1]))
            sim.join(worker_id, best[1])


class OnlineGreedy(Strategy):
    """Recommend open tasks to an arriving worker by marginal utility until one is accepted."""
    name = "OnlineGreedy"

    def on_worker_arrival(self, sim, worker_id):
        sim.offer_by_marginal_gain(worker_id)


class OnlineOptimal(Strategy):
    """Solve the assignment program over online workers and open tasks whenever something changes."""
    name = "OnlineOptimal"
    uses_retry = True

    def on_task_arrival(self, sim, task_id):
        self.replan(sim)

    def on_retry(self, sim):
        self.replan(sim)

    def replan(self, sim):
        if not sim.pending:
            return
        pool = set()
        for t in sim.pending:
            pool.update(sim.candidate_pool(t))
        if not pool:
            return
        program = build_online_program(sim.holdings, pool, list(sim.pending), sim.workers, sim.workload,
                                       sim.weights, sim.constraints, exclude=sim.offered)
        if not program.variables:
            return
        result = solve(program, budget=sim.config.online_node_budget)
        sim.record_solve(result)
        for (u, t) in sorted(result.chosen(program), key=lambda p: (p[1], p[0])):
            sim.offer(u, t)


class IndexStrategy(Strategy):
    """Offer each arriving task to its pre-computed index, then replace decliners from the online pool."""
    uses_retry = True

    def __init__(self):
        self.index = {}
        self._last_pool = {}

    def prepare(self, sim):
        self.index = self.build(sim)

    def build(self, sim) -> dict:
        raise NotImplementedError

    def propose(self, sim, task_id, pool) -> list:
        raise NotImplementedError

    def on_task_arrival(self, sim, task_id):
        for u in sorted(self.index.get(task_id, ())):
            if not sim.is_pending(task_id):
                break
            sim.offer(u, task_id)
        self.replace(sim, task_id)

    def on_worker_arrival(self, sim, worker_id):
        # late arrivals fill in for tasks whose index members declined
        sim.offer_by_marginal_gain(worker_id)

    def on_retry(self, sim):
        for t in list(sim.pending):
            self.replace(sim, t)

    def replace(self, sim, task_id):
        while sim.is_pending(task_id):
            pool = sim.candidate_pool(task_id)
            key = (tuple(pool), frozenset(sim.holdings.workers_of(task_id)))
            if not pool or self._last_pool.get(task_id) == key:
                return
            self._last_pool[task_id] = key
            proposals = self.propose(sim, task_id, pool)
            if not proposals:
                return
            for u in sorted(proposals):
                if not sim.is_pending(task_id):
                    break
                sim.offer(u, task_id)


class CDex(IndexStrategy):
    name = "CDex"

    def build(self, sim):
        greedy_state, _ = offline_greedy_design(sim.workers, sim.workload, sim.constraints, sim.weights)
        state, result = design_exact(sim.workers, sim.workload, sim.constraints, sim.weights,
                                     budget=sim.config.index_node_budget, incumbent_pairs=greedy_state.pairs())
        sim.record_solve(result)
        if state is None:
            state = greedy_state
        return {t: state.workers_of(t) for t in sim.tasks}

    def propose(self, sim, task_id, pool):
        program = build_replacement_program(sim.holdings, task_id, (), pool, sim.workers, sim.workload,
                                            sim.weights, sim.constraints)
        if not program.variables:
            return []
        greedy = online_greedy_replace(sim.holdings, task_id, (), pool, sim.workers, sim.workload,
                                       sim.weights, sim.constraints)
        incumbent = program.values_from_pairs(set(greedy.pairs()) - set(sim.holdings.pairs()))
        result = solve(program, budget=sim.config.replacement_node_budget, incumbent=incumbent)
        sim.record_solve(result)
        return [u for (u, _t) in result.chosen(program)]


class OfflineOnlineCDexApprox(IndexStrategy):
    name = "OfflineOnlineCDexApprox"

    def build(self, sim):
        state, _ = offline_greedy_design(sim.workers, sim.workload, sim.constraints, sim.weights)
        return {t: state.workers_of(t) for t in sim.tasks}

    def propose(self, sim, task_id, pool):
        state = online_greedy_replace(sim.holdings, task_id, (), pool, sim.workers, sim.workload,
                                      sim.weights, sim.constraints)
        return sorted(state.workers_of(task_id) - sim.holdings.workers_of(task_id))


class CDexPlus(IndexStrategy):
    name = "CDexPlus"

    def __init__(self):
        super().__init__()
        self.plus = None

    def build(self, sim):
        alpha = alpha_from_percentile(sim.workers, sim.config.alpha_percentile)
        self.plus, _, result = build_cdex_plus(sim.workers, sim.workload, sim.constraints, sim.weights, alpha,
                                               budget=sim.config.index_node_budget)
        sim.record_solve(result)
        return {t: self.plus.state.workers_of(t) for t in sim.tasks}

    def propose(self, sim, task_id, pool):
        self.plus.state = sim.holdings
        plus, _, result = maintain_cdex_plus(self.plus, Event(kind="decline", task_id=task_id), sim.workers,
                                             sim.workload, sim.constraints, sim.weights,
                                             budget=sim.config.replacement_node_budget, pool=pool)
        if result is not None:
            sim.record_solve(result)
        self.plus.cursors = plus.cursors
        proposals = sorted(plus.state.workers_of(task_id) - sim.holdings.workers_of(task_id))
        if proposals:
            return proposals
        # no virtual unit landed on the task; refill at worker granularity
        state = online_greedy_replace(sim.holdings, task_id, (), pool, sim.workers, sim.workload,
                                      sim.weights, sim.constraints)
        return sorted(state.workers_of(task_id) - sim.holdings.workers_of(task_id))


STRATEGY_CLASSES = {cls.name: cls for cls in (Benchmark, OnlineGreedy, OnlineOptimal, CDex,
                                               OfflineOnlineCDexApprox, CDexPlus)}


def make_strategy(name: str) -> Strategy:
    if name not in STRATEGY_CLASSES:
        raise ValueError(f"unknown strategy {name!r}, expected one of {', '.join(STRATEGIES)}")
    return STRATEGY_CLASSES[name]()


def run_strategy(strategy, scenario: Scenario, config: SimConfig, check_invariants: bool = True) -> SimReport:
    if isinstance(strategy, str):
        strategy = make_strategy(strategy)
    report = CrowdSimulation(scenario, config, check_invariants).run(strategy)
    final = report.final
    if final:
        logger.info(f"{strategy.name} seed {scenario.seed}: {final.tasks_successful}/{final.tasks_arrived} "
                    f"successful, objective {final.normalized_objective:.4f}")
    return report


def run_comparison(strategies: Iterable, config: SimConfig, seeds: Optional[Iterable] = None,
                   max_workers: int = 1, progress: bool = False) -> list:
    """Every strategy on the same scenario per seed; reports come back in (seed, strategy) order."""
    strategies = list(strategies)
    seeds = [config.seed] if seeds is None else list(seeds)
    scenarios = {s: generate_scenario(config.model_copy(update={"seed": s})) for s in seeds}
    cells = [(s, name) for s in seeds for name in strategies]

    results = {}
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = {
            executor.submit(run_strategy, name, scenarios[s], config.model_copy(update={"seed": s})): (i, s, name)
            for i, (s, name) in enumerate(cells)
        }
        for future in tqdm(as_completed(futures), total=len(futures), desc="Simulating", disable=not progress):
            i, _, _ = futures[future]
            results[i] = future.result()
    return [results[i] for i in range(len(cells))]


SWEEP_PARAMS = {
    "acceptance_mean": "acceptance_mean",
    "skill_mean": "skill_mean",
    "skills_per_task": "skills_per_task",
    "task_rate": "task_rate",
}


def run_sweep(param: str, values: Iterable, strategies: Iterable, config: SimConfig,
              seeds: Optional[Iterable] = None, max_workers: int = 1, progress: bool = False) -> list:
    """Comparison per parameter value; returns [(value, report), ...]."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}, expected one of {', '.join(SWEEP_PARAMS)}")
    strategies = list(strategies)
    tagged = []
    for value in values:
        try:
            cell_config = SimConfig(**{**config.model_dump(), SWEEP_PARAMS[param]: value})
        except ValidationError as e:
            raise InstanceError(f"invalid {param}={value}:\n{e}") from e
        for report in run_comparison(strategies, cell_config, seeds, max_workers, progress):
            tagged.append((value, report))
    return tagged
