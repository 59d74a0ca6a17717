import json
import math

import pytest

from spase.errors import EventError, InvalidInputError, ParseError
from spase.introspection import (E2ESchedule, IntrospectionConfig, WorkloadEvent, advance, events_from_rows,
                                 events_to_rows, load_events, overlap_round, round_introspection, segment_violations)
from spase.sim import Placement, Plan, simulate
from spase.solver import solve
from spase.workload import Cluster, ConfigOption, Task, random_workload

CLUSTER = Cluster.of(4)


def workload(seed, n=4, cluster=CLUSTER):
    return random_workload(seed, n, cluster)


def cfg(**kw):
    kw.setdefault("solver_timeout_s", 20.0)
    return IntrospectionConfig(**kw)


def single(tid, runtime, gpus=1):
    return Task(tid, (ConfigOption("ddp", gpus, runtime),))


def test_config_validation():
    for bad in (dict(interval_s=0), dict(interval_s=math.inf), dict(tolerance_s=-1),
                dict(switch_overhead_s=-1), dict(solver_timeout_s=0)):
        with pytest.raises(InvalidInputError):
            IntrospectionConfig(**bad)
    d = IntrospectionConfig()
    assert (d.interval_s, d.tolerance_s, d.switch_overhead_s, d.overlap) == (1000.0, 500.0, 0.0, False)


@pytest.mark.parametrize("start, seconds, expected", [(0.0, 10.0, None), (0.0, 4.0, 0.6), (8.0, 10.0, 0.8)])
def test_advance_examples(start, seconds, expected):
    t = single("a", 10.0)
    residual, done = advance([t], Plan({"a": Placement("n0", (0,), 0, start)}), seconds)
    if expected is None:
        assert done == ["a"] and residual == []
    else:
        assert done == [] and residual[0].remaining_fraction == pytest.approx(expected, abs=1e-12)
        assert residual[0].configs == t.configs


def test_advance_works_off_overhead_first():
    t = Task("a", (ConfigOption("ddp", 1, 10.0),), overhead_s=3.0)
    (r,), _ = advance([t], Plan({"a": Placement("n0", (0,), 0, 0.0)}), 5.0)
    assert r.overhead_s == 0.0 and r.remaining_fraction == pytest.approx(0.8)
    (r,), _ = advance([t], Plan({"a": Placement("n0", (0,), 0, 0.0)}), 2.0)
    assert r.overhead_s == 1.0 and r.remaining_fraction == 1.0


def test_advance_errors():
    with pytest.raises(InvalidInputError):
        advance([single("a", 1.0)], Plan({"b": Placement("n0", (0,), 0, 0.0)}), 1.0)
    with pytest.raises(InvalidInputError):
        advance([single("a", 1.0)], Plan({}), -1.0)


@pytest.mark.parametrize("seed", range(5))
def test_infinite_tolerance_reproduces_one_shot(seed):
    tasks = workload(seed)
    e = round_introspection(tasks, CLUSTER, cfg(tolerance_s=math.inf), seed=seed)
    assert e.makespan == e.one_shot_makespan
    assert e.adoptions == 1
    assert e.one_shot_makespan == solve(tasks, CLUSTER, 20.0, seed).makespan


@pytest.mark.parametrize("seed", range(5))
def test_zero_tolerance_never_worse(seed):
    e = round_introspection(workload(seed), CLUSTER, cfg(tolerance_s=0.0), seed=seed)
    assert e.makespan <= e.one_shot_makespan + 1e-6


def test_early_stop_of_critical_task_shortens_makespan():
    tasks = [single("long", 3000.0), single("short", 500.0)]
    cluster = Cluster.of(1)
    base = round_introspection(tasks, cluster, cfg())
    stopped = round_introspection(tasks, cluster, cfg(), [WorkloadEvent.stop(1, "long")])
    assert base.makespan == 3500.0
    assert stopped.makespan < base.makespan
    assert stopped.stopped == ("long",) and "short" in stopped.completed


def test_event_errors():
    tasks = [single("a", 500.0), single("b", 3000.0)]
    with pytest.raises(EventError):
        round_introspection(tasks, CLUSTER, cfg(), [WorkloadEvent.stop(1, "zz")])
    with pytest.raises(EventError, match="finished"):
        round_introspection(tasks, CLUSTER, cfg(), [WorkloadEvent.stop(2, "a")])
    with pytest.raises(EventError):
        round_introspection(tasks, CLUSTER, cfg(), [WorkloadEvent.arrive(1, single("b", 1.0))])
    with pytest.raises(EventError):
        WorkloadEvent(1, "pause", "a")
    with pytest.raises(EventError):
        WorkloadEvent(-1, "early-stop", "a")
    with pytest.raises(EventError):
        round_introspection(tasks, CLUSTER, cfg(), ["stop a"])


@pytest.mark.parametrize("seed", range(3))
def test_overlap_matches_sequential_without_events(seed):
    tasks = workload(seed)
    a = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0), seed=seed)
    b = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, overlap=True), seed=seed)
    assert a.dumps() == b.dumps()


def test_overlap_falls_back_on_boundary_events():
    tasks = workload(1)
    events = [WorkloadEvent.stop(2, tasks[0].id), WorkloadEvent.arrive(3, single("new", 1500.0, 2))]
    a = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0), events)
    b = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, overlap=True), events)
    assert a.dumps() == b.dumps()
    assert "new" in b.completed


def test_overlap_round_proposal():
    tasks = [single("a", 2500.0), single("b", 1500.0)]
    plan = solve(tasks, Cluster.of(2), 5.0).plan
    prop = overlap_round(tasks, plan, cfg(), Cluster.of(2))
    assert prop.makespan == pytest.approx(1500.0)
    assert overlap_round(tasks, plan, cfg(interval_s=5000.0), Cluster.of(2)) is None


@pytest.mark.parametrize("overlap", [False, True])
def test_empty_workload(overlap):
    e = round_introspection([], CLUSTER, cfg(overlap=overlap))
    assert e.segments == () and e.makespan == 0.0


def test_segments_offsets_validity_and_conservation():
    tasks = workload(3, 5)
    e = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, interval_s=700.0))
    offsets = [s.offset_s for s in e.segments]
    assert offsets == [700.0 * s.round for s in e.segments]
    assert all(v == [] for v in segment_violations(e))
    assert sorted(e.completed) == sorted(t.id for t in tasks)
    for t in tasks:
        total = sum(s.executed.get(t.id, 0.0) for s in e.segments)
        assert total == pytest.approx(t.remaining_fraction, abs=1e-9)
    cum = {t.id: 0.0 for t in tasks}
    for s in e.segments:
        for tid, x in s.executed.items():
            cum[tid] += x
            assert cum[tid] <= 1.0 + 1e-9
    assert max(iv.end_s for iv in e.intervals) == e.makespan
    assert simulate(e, tasks, CLUSTER).makespan_s == e.makespan


def test_segment_intervals_never_overlap_on_a_gpu():
    tasks = workload(4, 5)
    e = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, interval_s=600.0, switch_overhead_s=50.0))
    per_gpu = {}
    for iv in e.intervals:
        per_gpu.setdefault((iv.node, iv.gpu), []).append((iv.start_s, iv.end_s))
    for ivs in per_gpu.values():
        ivs.sort()
        assert all(b[0] >= a[1] - 1e-9 for a, b in zip(ivs, ivs[1:]))


def test_arrival_after_idle_gap():
    tasks = [single("a", 500.0)]
    e = round_introspection(tasks, CLUSTER, cfg(), [WorkloadEvent.arrive(3, single("late", 800.0))])
    assert e.completed == ("a", "late")
    assert e.makespan == pytest.approx(3800.0)


@pytest.mark.parametrize("seed", range(3))
def test_overhead_counted_in_adoption(seed):
    tasks = workload(seed)
    e = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, switch_overhead_s=300.0), seed=seed)
    assert e.makespan <= e.one_shot_makespan + 1e-6
    assert all(v == [] for v in segment_violations(e))


def test_overhead_only_for_started_tasks():
    tasks = workload(1)
    e = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, interval_s=700.0, switch_overhead_s=100.0), seed=1)
    charged = [(seg.round, t) for seg in e.segments for t in seg.workload if t.overhead_s > 0]
    assert charged, "instance should trigger at least one reconfiguration"
    for rnd, t in charged:
        assert t.remaining_fraction < 1.0 and t.overhead_s <= 100.0
    fresh = round_introspection(tasks, CLUSTER, cfg(tolerance_s=0.0, interval_s=700.0), seed=1)
    assert all(t.overhead_s == 0.0 for seg in fresh.segments for t in seg.workload)


def test_schedule_export(tmp_path):
    tasks = workload(0, 3)
    e = round_introspection(tasks, CLUSTER, cfg())
    e.save(tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["makespan_s"] == e.makespan and len(doc["segments"]) == len(e.segments)
    assert doc["segments"][0]["tasks"][0]["configs"]
    assert isinstance(e, E2ESchedule)


def test_events_file(tmp_path):
    events = [WorkloadEvent.stop(1, "a"), WorkloadEvent.arrive(2, single("z", 10.0))]
    path = tmp_path / "ev.json"
    path.write_text(json.dumps(events_to_rows(events)))
    assert load_events(path) == events
    for bad in ({"round": 1}, [{"round": -1, "action": "stop", "payload": "a"}],
                [{"round": 1, "action": "pause", "payload": "a"}], [{"round": 1, "action": "stop", "payload": 3}],
                [{"round": 1, "action": "add", "payload": {"id": "x"}}]):
        with pytest.raises(ParseError):
            events_from_rows(bad)
    path.write_text("not json")
    with pytest.raises(ParseError):
        load_events(path)
