import itertools
import random

from hypothesis import given, settings, strategies as st

from spase.scheduling import (NodeScheduler, Profile, assign_gpus, exact_schedule, heuristic_schedule,
                              node_lower_bound, serial_schedule)
from spase.sim import Placement, Plan, validate
from spase.workload import Cluster, ConfigOption, Task

items_st = st.lists(st.tuples(st.integers(1, 4), st.integers(1, 12).map(float)), min_size=1, max_size=5)


def test_profile_earliest_skips_busy_window():
    p = Profile(2)
    p.add(0.0, 5.0, 2)
    assert p.earliest(1, 3.0) == 5.0
    p.add(5.0, 2.0, 1)
    assert p.earliest(1, 3.0) == 5.0
    assert p.earliest(2, 1.0) == 7.0


def test_serial_schedule_back_to_back():
    ms, starts = serial_schedule([(2, 6.0), (2, 6.0)], 2, [0, 1])
    assert ms == 12.0 and starts == [0.0, 6.0]


@settings(max_examples=150, deadline=None)
@given(items_st, st.integers(4, 5))
def test_exact_equals_best_serial_order(items, cap):
    best = min(serial_schedule(items, cap, order)[0] for order in itertools.permutations(range(len(items))))
    ms, starts = exact_schedule(items, cap)
    assert ms == best
    assert ms == max(s + d for s, (_, d) in zip(starts, items))
    assert node_lower_bound(items, cap) <= ms <= heuristic_schedule(items, cap)[0]


@settings(max_examples=150, deadline=None)
@given(items_st, st.integers(4, 6))
def test_assigned_gpus_form_valid_plan(items, cap):
    _, starts = heuristic_schedule(items, cap)
    gpus = assign_gpus(items, starts, cap)
    tasks = [Task(f"t{k}", (ConfigOption("ddp", w, d),)) for k, (w, d) in enumerate(items)]
    plan = Plan({f"t{k}": Placement("n0", gpus[k], 0, starts[k]) for k in range(len(items))})
    assert validate(plan, tasks, Cluster.of(cap)) == []
    assert all(len(g) == w for g, (w, _) in zip(gpus, items))


def test_node_scheduler_maps_back_to_caller_order():
    sched = NodeScheduler()
    items = [(1, 3.0), (2, 5.0), (1, 3.0)]
    ms, starts = sched.schedule(items, 2)
    ms2, starts2 = sched.schedule(list(reversed(items)), 2)
    assert ms == ms2 == 8.0
    assert starts2 == list(reversed(starts))


def test_node_scheduler_heuristic_above_limit():
    rng = random.Random(3)
    items = [(rng.randint(1, 4), float(rng.randint(1, 9))) for _ in range(9)]
    sched = NodeScheduler(exact_limit=6)
    assert not sched.is_exact(len(items))
    assert sched.makespan(items, 4) == heuristic_schedule(items, 4)[0]
