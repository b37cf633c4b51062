"""
Test SmartCrowd data model, instance files and event parsing
"""
import json
from pathlib import Path

import pytest

from crowd_model import (
    AssignmentState, ConstraintConfig, InstanceError, ObjectiveWeights, UnknownWorkerError,
    WorkerProfile, instance_from_dict, instance_to_dict, load_events, load_example_instance,
    parse_events, roster_after, validate_instance,
)

EVENTS_PATH = Path(__file__).with_name("example_events.json")


def test_example_instance_loads():
    instance = load_example_instance()
    assert sorted(instance.workers) == [0, 1, 2, 3, 4, 5]
    assert instance.workload.task_ids == [0, 1, 2]
    assert instance.constraints == ConstraintConfig(1, 2)
    assert instance.weights == ObjectiveWeights(0.5, 0.5)
    assert validate_instance(instance.workers, instance.workload, instance.constraints, instance.weights) == []


def test_expected_profile_scales_by_acceptance():
    u1 = load_example_instance().workers[0]
    assert u1.expected_skills == pytest.approx((0.08,))
    assert u1.expected_wage == pytest.approx(0.04)


def test_validation_reports_every_problem():
    instance = load_example_instance()
    workers = dict(instance.workers)
    workers[0] = WorkerProfile(0, (0.1,), 1.5, 0.8)
    workers[1] = WorkerProfile(1, (0.3, 0.2), 0.2, 0.7)
    problems = validate_instance(workers, instance.workload, ConstraintConfig(3, 2), ObjectiveWeights(0.5, 0.6))
    assert any("wage out of [0,1]" in p for p in problems)
    assert any("worker 1: 2 skills" in p for p in problems)
    assert any("X_l 3 exceeds X_h 2" in p for p in problems)
    assert any("W1+W2 != 1" in p for p in problems)


def test_instance_file_rejects_unknown_fields():
    data = instance_to_dict(load_example_instance())
    data["workers"][0]["rating"] = 5
    with pytest.raises(InstanceError):
        instance_from_dict(data)


def test_instance_dict_survives_reload():
    instance = load_example_instance()
    again = instance_from_dict(json.loads(json.dumps(instance_to_dict(instance))))
    assert again == instance


def test_ids_default_to_position():
    data = instance_to_dict(load_example_instance())
    for w in data["workers"]:
        del w["id"]
    instance = instance_from_dict(data)
    assert sorted(instance.workers) == [0, 1, 2, 3, 4, 5]


def test_assignment_state_tracks_load():
    state = AssignmentState.empty(range(3), [0, 1])
    state.assign(0, 0)
    state.assign(0, 1)
    state.assign(0, 1)
    state.assign(2, 1)
    assert state.load_of(0) == 2
    assert state.workers_of(1) == {0, 2}
    assert state.tasks_of(0) == [0, 1]
    state.release(0, 1)
    assert state.load_of(0) == 1
    assert state.pairs() == [(0, 0), (2, 1)]
    assert state.load_errors() == []


def test_remove_worker_releases_every_task():
    state = AssignmentState.from_pairs([(1, 0), (1, 2), (3, 2)], range(4), [0, 1, 2])
    state.remove_worker(1)
    assert state.pairs() == [(3, 2)]
    assert not state.is_available(1)


def test_copy_is_independent():
    state = AssignmentState.from_pairs([(0, 0)], [0, 1], [0])
    other = state.copy()
    other.assign(1, 0)
    assert state.workers_of(0) == {0}


def test_bundled_events_parse():
    instance = load_example_instance()
    events = load_events(EVENTS_PATH, instance.workers, instance.workload)
    assert [e.kind for e in events] == ["decline", "add", "update", "delete"]
    assert events[0].task_id == 0 and events[0].worker_ids == (5,)
    assert events[1].workers[0].id == 6
    assert events[3].worker_ids == (6,)


def test_event_reference_errors_fail_before_anything_applies():
    instance = load_example_instance()
    with pytest.raises(UnknownWorkerError):
        parse_events({"events": [{"kind": "delete", "worker_ids": [9]}]}, instance.workers, instance.workload)
    with pytest.raises(UnknownWorkerError):
        parse_events({"events": [{"kind": "delete", "worker_ids": [1]},
                                 {"kind": "decline", "task_id": 0, "worker_ids": [1]}]},
                     instance.workers, instance.workload)
    with pytest.raises(InstanceError):
        parse_events({"events": [{"kind": "decline", "task_id": 7, "worker_ids": [0]}]},
                     instance.workers, instance.workload)
    with pytest.raises(InstanceError):
        parse_events({"events": [{"kind": "retire", "worker_ids": [0]}]}, instance.workers, instance.workload)


def test_added_worker_needs_matching_skill_count():
    instance = load_example_instance()
    bad = {"events": [{"kind": "add", "workers": [{"skills": [0.1, 0.2], "wage": 0.1, "acceptance_ratio": 0.5}]}]}
    with pytest.raises(InstanceError):
        parse_events(bad, instance.workers, instance.workload)


def test_roster_after_events():
    instance = load_example_instance()
    events = load_events(EVENTS_PATH, instance.workers, instance.workload)
    roster = instance.workers
    for event in events:
        roster = roster_after(roster, event)
    assert sorted(roster) == [0, 1, 2, 3, 4, 5]
    assert roster[2].skills == (0.35,)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"✅ {name}")
