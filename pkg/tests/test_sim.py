import random

import pytest

from conftest import canonical, small_instance
from spase.errors import InvalidInputError, PlanInvalidError
from spase.sim import (VIOLATION_KINDS, Placement, Plan, format_plan, plan_from_list, plan_makespan, plan_to_list,
                       simulate, validate)
from spase.solver import brute_force
from spase.workload import Cluster, ConfigOption, Task


def one(tid="a", runtime=10.0, gpus=1):
    return Task(tid, (ConfigOption("ddp", gpus, runtime),))


def kinds(violations):
    return [v.kind for v in violations]


def test_oracle_plan_of_canonical_is_valid():
    tasks, cluster = canonical()
    out = brute_force(tasks, cluster)
    assert validate(out.plan, tasks, cluster) == []
    assert out.makespan == 10.0


def test_overlap_names_both_tasks():
    tasks = [one("a"), one("b")]
    plan = Plan({"a": Placement("n0", (0,), 0, 0.0), "b": Placement("n0", (0,), 0, 5.0)})
    v = validate(plan, tasks, Cluster.of(1))
    assert kinds(v) == ["isolation"] and v[0].tasks == ("a", "b")


def test_back_to_back_is_not_overlap():
    tasks = [one("a"), one("b")]
    plan = Plan({"a": Placement("n0", (0,), 0, 0.0), "b": Placement("n0", (0,), 0, 10.0)})
    assert validate(plan, tasks, Cluster.of(1)) == []


def test_isolation_reports_every_pair():
    tasks = [one(t) for t in "abc"]
    plan = Plan({t: Placement("n0", (0,), 0, 1.0 * i) for i, t in enumerate("abc")})
    v = validate(plan, tasks, Cluster.of(1))
    assert sorted(x.tasks for x in v) == [("a", "b"), ("a", "c"), ("b", "c")]


def test_alloc_count():
    tasks = [one(gpus=2)]
    v = validate(Plan({"a": Placement("n0", (0,), 0, 0.0)}), tasks, Cluster.of(2))
    assert kinds(v) == ["alloc-count"]


def test_missing_placement_and_bad_config():
    tasks = [one("a"), one("b")]
    v = validate(Plan({"a": Placement("n0", (0,), 3, 0.0)}), tasks, Cluster.of(2))
    assert sorted(kinds(v)) == ["one-config", "one-config", "one-node"]


@pytest.mark.parametrize("placement", [
    Placement("n0", (2,), 0, 0.0),
    Placement("n0", (0,), 0, -1.0),
    Placement("n0", (0,), 0, float("nan")),
])
def test_bounds(placement):
    assert "bounds" in kinds(validate(Plan({"a": placement}), [one()], Cluster.of(2)))


def test_gang_and_unselected_node():
    tasks = [one(gpus=2)]
    skew = Placement("n0", (0, 1), 0, 0.0, gpu_starts=(0.0, 1.0))
    assert kinds(validate(Plan({"a": skew}), tasks, Cluster.of(2))) == ["gang"]
    foreign = Placement("n0", (0, 1), 0, 0.0, blocked=(("n1", 0),))
    assert kinds(validate(Plan({"a": foreign}), tasks, Cluster.of(2, 2))) == ["unselected-node"]


def test_every_kind_is_known():
    assert len(set(VIOLATION_KINDS)) == 7


def test_unknown_ids_raise():
    with pytest.raises(InvalidInputError):
        validate(Plan({"zz": Placement("n0", (0,), 0, 0.0)}), [one()], Cluster.of(1))
    with pytest.raises(InvalidInputError):
        validate(Plan({"a": Placement("nX", (0,), 0, 0.0)}), [one()], Cluster.of(1))


def test_simulate_closed_forms():
    m = simulate(Plan({"a": Placement("n0", (0,), 0, 0.0)}), [one()], Cluster.of(2), 1.0)
    assert m.makespan_s == 10.0 and m.mean_utilization == 0.5
    tasks = [one("a"), one("b")]
    both = Plan({"a": Placement("n0", (0,), 0, 0.0), "b": Placement("n0", (1,), 0, 0.0)})
    m = simulate(both, tasks, Cluster.of(2), 1.0)
    assert m.makespan_s == 10.0 and m.mean_utilization == 1.0 and all(u == 1.0 for u in m.utilization)


def test_sequential_plan_utilization_dips():
    tasks = [one("a", gpus=1), one("b", gpus=2)]
    plan = Plan({"a": Placement("n0", (0,), 0, 0.0), "b": Placement("n0", (0, 1), 0, 10.0)})
    m = simulate(plan, tasks, Cluster.of(4), 5.0)
    assert m.utilization == [0.25, 0.25, 0.5, 0.5]


def test_simulate_refuses_invalid_plan():
    tasks = [one("a"), one("b")]
    plan = Plan({"a": Placement("n0", (0,), 0, 0.0), "b": Placement("n0", (0,), 0, 5.0)})
    with pytest.raises(PlanInvalidError) as exc:
        simulate(plan, tasks, Cluster.of(1))
    assert kinds(exc.value.violations) == ["isolation"]


def test_csv_export(tmp_path):
    m = simulate(Plan({"a": Placement("n0", (0,), 0, 0.0)}), [one()], Cluster.of(2), 5.0)
    m.save_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "time_s,busy_gpus,total_gpus,utilization"
    assert lines[1:] == ["0.000000,1,2,0.500000", "5.000000,1,2,0.500000"]


def test_simulate_is_pure_and_matches_makespan():
    rng = random.Random(9)
    for _ in range(30):
        tasks, cluster = small_instance(rng)
        plan = brute_force(tasks, cluster).plan
        a, b = simulate(plan, tasks, cluster), simulate(plan, tasks, cluster)
        assert a == b
        assert a.makespan_s == plan_makespan(plan, tasks)


def test_plan_serialization_round_trip():
    p = Plan({"a": Placement("n0", (0, 1), 0, 1.5, gpu_starts=(1.5, 1.5), blocked=(("n1", 0),)),
              "b": Placement("n1", (0,), 1, 0.0)})
    assert plan_from_list(plan_to_list(p)) == p
    text = format_plan(Plan({"a": Placement("n0", (0,), 0, 0.0)}), [one()])
    assert text == "a\tn0\tgpus=0\tddpx1\tstart=0.000000\tend=10.000000"
