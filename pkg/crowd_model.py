"""
SmartCrowd - Crowd Model
Workers, tasks, constraints and the assignment state shared by every solver
"""
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, ValidationError

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9
EXAMPLE_INSTANCE_PATH = Path(__file__).with_name("example_instance.json")


class SmartCrowdError(Exception):
    """Base error for everything raised by the SmartCrowd modules."""


class InstanceError(SmartCrowdError, ValueError):
    """Instance, index or event data that cannot be parsed or is inconsistent."""


class UnknownWorkerError(InstanceError, KeyError):
    def __init__(self, worker_id):
        super().__init__(f"unknown worker id {worker_id}")
        self.worker_id = worker_id

    def __str__(self):
        return self.args[0]


@dataclass(frozen=True)
class WorkerProfile:
    """
    Human factors of one worker.

    Args:
        id: dense worker identifier
        skills: expertise per skill, each in [0,1]
        wage: minimum acceptable pay per task
        acceptance_ratio: probability of accepting a recommended task
    """
    id: int
    skills: tuple
    wage: float
    acceptance_ratio: float

    def __post_init__(self):
        object.__setattr__(self, "skills", tuple(float(s) for s in self.skills))

    @property
    def expected_skills(self) -> tuple:
        return tuple(self.acceptance_ratio * s for s in self.skills)

    @property
    def expected_wage(self) -> float:
        return self.acceptance_ratio * self.wage

    def with_id(self, worker_id: int) -> "WorkerProfile":
        return replace(self, id=worker_id)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "skills": list(self.skills),
            "wage": self.wage,
            "acceptance_ratio": self.acceptance_ratio,
        }


@dataclass(frozen=True)
class TaskSpec:
    id: int
    quality_thresholds: tuple
    max_cost: float

    def __post_init__(self):
        object.__setattr__(self, "quality_thresholds", tuple(float(q) for q in self.quality_thresholds))

    def to_dict(self) -> dict:
        return {"id": self.id, "quality_thresholds": list(self.quality_thresholds), "max_cost": self.max_cost}


@dataclass(frozen=True)
class Workload:
    tasks: tuple
    skill_count: int

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def __iter__(self):
        return iter(self.tasks)

    def __len__(self):
        return len(self.tasks)

    @property
    def task_ids(self) -> list:
        return [t.id for t in self.tasks]

    def task(self, task_id: int) -> TaskSpec:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise InstanceError(f"unknown task id {task_id}")


@dataclass(frozen=True)
class ConstraintConfig:
    tasks_per_worker_min: int = 0
    tasks_per_worker_max: int = 1

    @property
    def x_l(self) -> int:
        return self.tasks_per_worker_min

    @property
    def x_h(self) -> int:
        return self.tasks_per_worker_max


@dataclass(frozen=True)
class ObjectiveWeights:
    w1: float = 0.5
    w2: float = 0.5

    @classmethod
    def from_w1(cls, w1: float) -> "ObjectiveWeights":
        return cls(w1=w1, w2=1.0 - w1)


@dataclass(frozen=True)
class CDexIndex:
    """Assignment of a worker set to one task together with its P vector <v, q_1..q_m, w>."""
    task_id: int
    value: float
    expected_quality: tuple
    expected_cost: float
    assigned_workers: frozenset

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "value": self.value,
            "expected_quality": list(self.expected_quality),
            "expected_cost": self.expected_cost,
            "workers": sorted(self.assigned_workers),
        }


@dataclass(frozen=True)
class VirtualWorker:
    """
    Cluster of indistinguishable workers.

    Skills are the minimum p-scaled skills of the members and the wage is the
    maximum p-scaled wage, so anything feasible for the virtual worker is
    feasible for any of its members.
    """
    id: int
    skills: tuple
    wage: float
    members: tuple
    capacity_max: int
    capacity_min: int

    @property
    def size(self) -> int:
        return len(self.members)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "skills": list(self.skills),
            "wage": self.wage,
            "members": list(self.members),
            "capacity_max": self.capacity_max,
            "capacity_min": self.capacity_min,
        }


Roster = dict


def as_roster(workers: Union[Mapping, Iterable]) -> dict:
    """Worker profiles keyed by id, in id order."""
    if isinstance(workers, Mapping):
        items = workers.values()
    else:
        items = workers
    roster = {}
    for w in sorted(items, key=lambda w: w.id):
        if w.id in roster:
            raise InstanceError(f"duplicate worker id {w.id}")
        roster[w.id] = w
    return roster


@dataclass
class AssignmentState:
    """
    Live worker-to-task assignment.

    task_workers holds L_t per task, load holds C_u per worker. Both are kept
    in step by assign/release; indexes is the last CDexIndex set computed for
    the state.
    """
    task_workers: dict = field(default_factory=dict)
    load: dict = field(default_factory=dict)
    available: dict = field(default_factory=dict)
    indexes: dict = field(default_factory=dict)

    @classmethod
    def empty(cls, worker_ids: Iterable, task_ids: Iterable) -> "AssignmentState":
        worker_ids = list(worker_ids)
        return cls(
            task_workers={t: set() for t in task_ids},
            load={u: 0 for u in worker_ids},
            available={u: True for u in worker_ids},
        )

    @classmethod
    def from_pairs(cls, pairs: Iterable, worker_ids: Iterable, task_ids: Iterable) -> "AssignmentState":
        state = cls.empty(worker_ids, task_ids)
        for u, t in pairs:
            state.assign(u, t)
        return state

    def copy(self) -> "AssignmentState":
        return AssignmentState(
            task_workers={t: set(ws) for t, ws in self.task_workers.items()},
            load=dict(self.load),
            available=dict(self.available),
            indexes=dict(self.indexes),
        )

    def workers_of(self, task_id: int) -> frozenset:
        return frozenset(self.task_workers.get(task_id, ()))

    def tasks_of(self, worker_id: int) -> list:
        return sorted(t for t, ws in self.task_workers.items() if worker_id in ws)

    def load_of(self, worker_id: int) -> int:
        return self.load.get(worker_id, 0)

    def is_available(self, worker_id: int) -> bool:
        return self.available.get(worker_id, False)

    def assign(self, worker_id: int, task_id: int):
        members = self.task_workers.setdefault(task_id, set())
        if worker_id in members:
            return
        members.add(worker_id)
        self.load[worker_id] = self.load.get(worker_id, 0) + 1
        self.available.setdefault(worker_id, True)

    def release(self, worker_id: int, task_id: int):
        members = self.task_workers.get(task_id)
        if not members or worker_id not in members:
            return
        members.discard(worker_id)
        self.load[worker_id] -= 1

    def add_worker(self, worker_id: int):
        self.load.setdefault(worker_id, 0)
        self.available[worker_id] = True

    def remove_worker(self, worker_id: int):
        for t in self.tasks_of(worker_id):
            self.release(worker_id, t)
        self.load.pop(worker_id, None)
        self.available.pop(worker_id, None)

    def pairs(self) -> list:
        return sorted((u, t) for t, ws in self.task_workers.items() for u in ws)

    def load_errors(self) -> list:
        counted = {u: 0 for u in self.load}
        for ws in self.task_workers.values():
            for u in ws:
                counted[u] = counted.get(u, 0) + 1
        return [
            f"worker {u}: load {self.load.get(u, 0)} but assigned to {c} tasks"
            for u, c in sorted(counted.items()) if c != self.load.get(u, 0)
        ]


@dataclass
class Instance:
    workers: dict
    workload: Workload
    constraints: ConstraintConfig
    weights: ObjectiveWeights

    @property
    def skill_count(self) -> int:
        return self.workload.skill_count


# ============================================================
# Validation
# ============================================================

def _in_unit(x: float) -> bool:
    return -TOLERANCE <= x <= 1 + TOLERANCE and not math.isnan(x)


def validate_instance(workers, workload: Workload, constraints: ConstraintConfig,
                      weights: ObjectiveWeights) -> list:
    """Every violated invariant of an instance as a readable message; empty means valid."""
    violations = []
    m = workload.skill_count
    workers = list(workers.values()) if isinstance(workers, Mapping) else list(workers)

    if m <= 0:
        violations.append(f"skill count {m} must be positive")

    seen = set()
    for w in workers:
        if w.id in seen:
            violations.append(f"worker {w.id}: duplicate id")
        seen.add(w.id)
        if len(w.skills) != m:
            violations.append(f"worker {w.id}: {len(w.skills)} skills, expected {m}")
        for j, s in enumerate(w.skills):
            if not _in_unit(s):
                violations.append(f"worker {w.id}: skill {j} out of [0,1] ({s})")
        if not _in_unit(w.wage):
            violations.append(f"worker {w.id}: wage out of [0,1] ({w.wage})")
        if not _in_unit(w.acceptance_ratio):
            violations.append(f"worker {w.id}: acceptance ratio out of [0,1] ({w.acceptance_ratio})")

    task_ids = set()
    for t in workload.tasks:
        if t.id in task_ids:
            violations.append(f"task {t.id}: duplicate id")
        task_ids.add(t.id)
        if len(t.quality_thresholds) != m:
            violations.append(f"task {t.id}: {len(t.quality_thresholds)} thresholds, expected {m}")
        if any(q < 0 for q in t.quality_thresholds):
            violations.append(f"task {t.id}: negative quality threshold")
        if t.max_cost < 0:
            violations.append(f"task {t.id}: negative max cost ({t.max_cost})")

    if constraints.x_l < 0:
        violations.append(f"X_l {constraints.x_l} must be non-negative")
    if constraints.x_h <= 0:
        violations.append(f"X_h {constraints.x_h} must be positive")
    if constraints.x_l > constraints.x_h:
        violations.append(f"X_l {constraints.x_l} exceeds X_h {constraints.x_h}")
    if constraints.x_l > len(workload):
        violations.append(f"X_l {constraints.x_l} exceeds the task count {len(workload)}")

    if weights.w1 < 0 or weights.w2 < 0:
        violations.append("weights must be non-negative")
    if abs(weights.w1 + weights.w2 - 1.0) > TOLERANCE:
        violations.append(f"W1+W2 != 1 ({weights.w1} + {weights.w2})")

    return violations


def feasibility_warnings(workers, workload: Workload, constraints: ConstraintConfig) -> list:
    n = len(workers)
    if n * constraints.x_h < len(workload):
        return [f"{n} workers x X_h={constraints.x_h} cannot cover {len(workload)} tasks"]
    return []


# ============================================================
# Instance files
# ============================================================

class WorkerRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: Optional[int] = None
    skills: list[float]
    wage: float
    acceptance_ratio: float


class TaskRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: Optional[int] = None
    quality_thresholds: list[float]
    max_cost: float


class ConstraintRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tasks_per_worker_min: int = 0
    tasks_per_worker_max: int = 1


class WeightRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    w1: float = 0.5
    w2: float = 0.5


class InstanceFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    skill_count: int
    workers: list[WorkerRecord]
    tasks: list[TaskRecord]
    constraints: ConstraintRecord = ConstraintRecord()
    weights: WeightRecord = WeightRecord()


def worker_from_record(record: WorkerRecord, default_id: int) -> WorkerProfile:
    return WorkerProfile(
        id=default_id if record.id is None else record.id,
        skills=tuple(record.skills),
        wage=record.wage,
        acceptance_ratio=record.acceptance_ratio,
    )


def instance_from_dict(data: dict) -> Instance:
    try:
        doc = InstanceFile.model_validate(data)
    except ValidationError as e:
        raise InstanceError(f"invalid instance: {e}") from e

    workers = [worker_from_record(r, i) for i, r in enumerate(doc.workers)]
    tasks = [
        TaskSpec(id=i if r.id is None else r.id, quality_thresholds=tuple(r.quality_thresholds), max_cost=r.max_cost)
        for i, r in enumerate(doc.tasks)
    ]
    instance = Instance(
        workers=as_roster(workers),
        workload=Workload(tasks=tuple(tasks), skill_count=doc.skill_count),
        constraints=ConstraintConfig(doc.constraints.tasks_per_worker_min, doc.constraints.tasks_per_worker_max),
        weights=ObjectiveWeights(doc.weights.w1, doc.weights.w2),
    )
    return instance


def instance_to_dict(instance: Instance) -> dict:
    return {
        "skill_count": instance.workload.skill_count,
        "workers": [w.to_dict() for w in instance.workers.values()],
        "tasks": [t.to_dict() for t in instance.workload.tasks],
        "constraints": {
            "tasks_per_worker_min": instance.constraints.x_l,
            "tasks_per_worker_max": instance.constraints.x_h,
        },
        "weights": {"w1": instance.weights.w1, "w2": instance.weights.w2},
    }


def load_instance(path) -> Instance:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InstanceError(f"{path}: not valid JSON ({e})") from e
    instance = instance_from_dict(data)
    logger.info(f"Loaded {len(instance.workers)} workers, {len(instance.workload)} tasks from {path}")
    return instance


def save_instance(instance: Instance, path):
    with open(path, "w") as f:
        json.dump(instance_to_dict(instance), f, indent=2)


def load_example_instance() -> Instance:
    """Six-worker, three-task running example (workers u1..u6 have ids 0..5)."""
    return load_instance(EXAMPLE_INSTANCE_PATH)


# ============================================================
# Maintenance events
# ============================================================

EVENT_KINDS = ("add", "delete", "update", "decline")


@dataclass(frozen=True)
class Event:
    """
    One churn event.

    add carries new profiles, update carries replacement profiles, delete
    carries worker ids, decline carries a task id and the declining workers.
    """
    kind: str
    workers: tuple = ()
    worker_ids: tuple = ()
    task_id: Optional[int] = None

    @property
    def affected_ids(self) -> tuple:
        if self.kind in ("add", "update"):
            return tuple(w.id for w in self.workers)
        return self.worker_ids

    def to_dict(self) -> dict:
        data = {"kind": self.kind}
        if self.workers:
            data["workers"] = [w.to_dict() for w in self.workers]
        if self.worker_ids:
            data["worker_ids"] = list(self.worker_ids)
        if self.task_id is not None:
            data["task_id"] = self.task_id
        return data


class EventRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: str
    workers: list[WorkerRecord] = []
    worker_ids: list[int] = []
    task_id: Optional[int] = None


class EventFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    events: list[EventRecord] = []


def parse_events(data: dict, workers, workload: Workload) -> list:
    """
    Parse an event document and check every reference against the roster as
    it evolves through the events, so a bad reference fails before anything
    is applied.
    """
    try:
        doc = EventFile.model_validate(data)
    except ValidationError as e:
        raise InstanceError(f"invalid event file: {e}") from e

    known = set(workers)
    next_id = max(known, default=-1) + 1
    task_ids = set(workload.task_ids)
    events = []
    for i, record in enumerate(doc.events):
        where = f"event {i} ({record.kind})"
        if record.kind not in EVENT_KINDS:
            raise InstanceError(f"{where}: unknown kind, expected one of {', '.join(EVENT_KINDS)}")

        if record.kind == "add":
            profiles = []
            for r in record.workers:
                profile = worker_from_record(r, next_id)
                if profile.id in known:
                    raise InstanceError(f"{where}: worker {profile.id} already exists")
                known.add(profile.id)
                next_id = max(next_id, profile.id) + 1
                profiles.append(profile)
            events.append(Event(kind="add", workers=tuple(profiles)))

        elif record.kind == "update":
            profiles = []
            for r in record.workers:
                if r.id is None:
                    raise InstanceError(f"{where}: updated workers need an id")
                if r.id not in known:
                    raise UnknownWorkerError(r.id)
                profiles.append(worker_from_record(r, r.id))
            events.append(Event(kind="update", workers=tuple(profiles)))

        elif record.kind == "delete":
            for u in record.worker_ids:
                if u not in known:
                    raise UnknownWorkerError(u)
            known -= set(record.worker_ids)
            events.append(Event(kind="delete", worker_ids=tuple(record.worker_ids)))

        else:
            if record.task_id not in task_ids:
                raise InstanceError(f"{where}: unknown task id {record.task_id}")
            for u in record.worker_ids:
                if u not in known:
                    raise UnknownWorkerError(u)
            events.append(Event(kind="decline", worker_ids=tuple(record.worker_ids), task_id=record.task_id))

        for profile in events[-1].workers:
            if len(profile.skills) != workload.skill_count:
                raise InstanceError(f"{where}: worker {profile.id} has {len(profile.skills)} skills, "
                                    f"expected {workload.skill_count}")
    return events


def load_events(path, workers, workload: Workload) -> list:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise InstanceError(f"{path}: not valid JSON ({e})") from e
    return parse_events(data, workers, workload)


def roster_after(workers, event: Event) -> dict:
    roster = dict(workers)
    if event.kind in ("add", "update"):
        for w in event.workers:
            roster[w.id] = w
    elif event.kind == "delete":
        for u in event.worker_ids:
            roster.pop(u, None)
    return as_roster(roster)
