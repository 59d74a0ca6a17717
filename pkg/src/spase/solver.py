"""Anytime makespan minimization and an exhaustive oracle.

:func:`solve` starts from the best baseline plan, improves it by local
search over per-task (configuration, node) choices and then runs a
depth-first branch-and-bound over the same choices. Each node's schedule is
computed by :class:`~spase.scheduling.NodeScheduler`, which is exact for up
to six tasks per node.

:func:`brute_force` shares none of that machinery: it enumerates GPU subsets
and task orders directly and is meant as a test oracle on tiny instances.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .baselines import BASELINES
from .errors import InvalidInputError, LimitExceededError, SolutionRejectedError, SpaseError, UnschedulableTaskError
from .milp import MilpModel, check_solution, parse_solution_text, solution_to_plan
from .scheduling import EXACT_LIMIT, NodeScheduler, assign_gpus, node_lower_bound
from .sim import Placement, Plan, plan_makespan, validate
from .workload import Cluster, Task, check_schedulable, check_unique_ids

PROVEN = "proven-optimal"
TIMEOUT = "incumbent-timeout"
INFEASIBLE = "infeasible"

EPS = 1e-9


@dataclass(frozen=True)
class SolveOutcome:
    plan: Plan | None
    makespan: float
    status: str
    elapsed_s: float
    nodes_explored: int
    history: tuple[tuple[float, float], ...] = ()
    message: str = ""
    source: str = ""
    unschedulable: str | None = None

    @property
    def feasible(self) -> bool:
        return self.status != INFEASIBLE


def lower_bound(tasks: Sequence[Task], cluster: Cluster) -> float:
    """Longest unavoidable task versus total GPU-seconds spread over the cluster."""
    if not tasks:
        return 0.0
    longest = max(min(t.effective_runtime(s) for s in range(len(t.configs))) for t in tasks)
    area = sum(min(c.gpu_count * t.effective_runtime(s) for s, c in enumerate(t.configs)) for t in tasks)
    return max(longest, area / cluster.total_gpus)


def _infeasible(err: UnschedulableTaskError, started: float) -> SolveOutcome:
    return SolveOutcome(None, math.inf, INFEASIBLE, time.monotonic() - started, 0, (), str(err),
                        unschedulable=err.task_id)


class _Search:
    """Shared state of one :func:`solve` call."""

    def __init__(self, tasks: Sequence[Task], cluster: Cluster, deadline: float, started: float):
        self.tasks = list(tasks)
        self.cluster = cluster
        self.deadline = deadline
        self.started = started
        self.sched = NodeScheduler()
        self.quick = NodeScheduler(exact_limit=0)
        self.caps = [n.gpu_count for n in cluster.nodes]
        # options[i] = [(node index, config index, width, runtime)]; for a given
        # node and width only the fastest configuration is kept, since a
        # shorter item of the same width never lengthens a node's schedule.
        self.options = []
        for t in self.tasks:
            fastest: dict[tuple[int, int], tuple] = {}
            for s, c in enumerate(t.configs):
                for n, cap in enumerate(self.caps):
                    if c.gpu_count <= cap:
                        opt = (n, s, c.gpu_count, t.effective_runtime(s))
                        key = (n, c.gpu_count)
                        if key not in fastest or opt[3] < fastest[key][3]:
                            fastest[key] = opt
            self.options.append(sorted(fastest.values(), key=lambda o: (o[3], o[2], o[0], o[1])))
        self.best_ms = math.inf
        self.best_choice: list[tuple[int, int]] | None = None
        self.history: list[tuple[float, float]] = []
        self.nodes = 0
        self.timed_out = False
        self.inexact = False

    def expired(self) -> bool:
        if time.monotonic() >= self.deadline:
            self.timed_out = True
        return self.timed_out

    def items_on(self, choice, n):
        return [(self.tasks[i].configs[s].gpu_count, self.tasks[i].effective_runtime(s))
                for i, (m, s) in enumerate(choice) if m == n]

    def node_makespan(self, items, n) -> float:
        return self.sched.makespan(items, self.caps[n])

    def quick_makespan(self, items, n) -> float:
        return self.quick.makespan(items, self.caps[n])

    def evaluate(self, choice) -> float:
        return max(self.node_makespan(self.items_on(choice, n), n) for n in range(len(self.caps)))

    def offer(self, ms: float, choice) -> None:
        if ms < self.best_ms - EPS:
            self.best_ms = ms
            self.best_choice = list(choice)
            self.history.append((time.monotonic() - self.started, ms))

    def to_plan(self, choice) -> Plan:
        placements = {}
        for n, node in enumerate(self.cluster.nodes):
            ids = [i for i, (m, _) in enumerate(choice) if m == n]
            items = [(self.tasks[i].configs[choice[i][1]].gpu_count, self.tasks[i].effective_runtime(choice[i][1]))
                     for i in ids]
            _, starts = self.sched.schedule(items, node.gpu_count)
            gpus = assign_gpus(items, starts, node.gpu_count)
            for k, i in enumerate(ids):
                placements[self.tasks[i].id] = Placement(node.id, gpus[k], choice[i][1], starts[k])
        return Plan(placements)

    # -- local search ------------------------------------------------------

    def local_search(self) -> None:
        """Steepest descent over single-task moves, ranked by (makespan, GPU area).

        Moves are scored with list scheduling, which is fast and never
        underestimates what the exact node scheduler achieves later.
        """
        choice = list(self.best_choice)
        node_ms = [self.quick_makespan(self.items_on(choice, n), n) for n in range(len(self.caps))]

        def area(ch):
            return sum(self.tasks[i].configs[s].gpu_count * self.tasks[i].effective_runtime(s)
                       for i, (_, s) in enumerate(ch))

        current = (max(node_ms), area(choice))
        while not self.expired():
            best_move = None
            for i, opts in enumerate(self.options):
                old = choice[i]
                for n, s, _, _ in opts:
                    if (n, s) == old:
                        continue
                    choice[i] = (n, s)
                    ms = list(node_ms)
                    for m in {old[0], n}:
                        ms[m] = self.quick_makespan(self.items_on(choice, m), m)
                    key = (max(ms), area(choice))
                    if key[0] < current[0] - EPS or (key[0] <= current[0] + EPS and key[1] < current[1] - EPS):
                        if best_move is None or key < best_move[0]:
                            best_move = (key, i, (n, s), ms)
                    choice[i] = old
                self.nodes += 1
                if self.expired():
                    break
            if best_move is None:
                break
            current, i, move, node_ms = best_move
            choice[i] = move
            self.offer(current[0], choice)

    # -- branch and bound ----------------------------------------------------

    def branch_and_bound(self) -> None:
        order = sorted(range(len(self.tasks)), key=lambda i: (-self.options[i][0][3], i))
        min_rt = [self.options[i][0][3] for i in order]
        min_area = [min(o[2] * o[3] for o in self.options[i]) for i in order]
        # suffix maxima / sums over the remaining tasks
        k = len(order)
        rest_rt = [0.0] * (k + 1)
        rest_area = [0.0] * (k + 1)
        for d in range(k - 1, -1, -1):
            rest_rt[d] = max(rest_rt[d + 1], min_rt[d])
            rest_area[d] = rest_area[d + 1] + min_area[d]
        total = float(sum(self.caps))
        n_nodes = len(self.caps)
        items: list[list] = [[] for _ in range(n_nodes)]
        node_bound = [0.0] * n_nodes
        choice: list = [None] * len(self.tasks)

        def rec(d: int, area: float) -> None:
            self.nodes += 1
            if d == k:
                ms = max(self.node_makespan(items[n], n) for n in range(n_nodes))
                if any(len(items[n]) > EXACT_LIMIT for n in range(n_nodes)):
                    self.inexact = True
                self.offer(ms, choice)
                return
            if self.expired():
                return
            i = order[d]
            for n, s, w, r in self.options[i]:
                if not items[n]:
                    # identical empty nodes are interchangeable: branch on the first only
                    first = next(m for m in range(n_nodes) if not items[m] and self.caps[m] == self.caps[n])
                    if first != n:
                        continue
                items[n].append((w, r))
                old_bound = node_bound[n]
                new_area = area + w * r
                node_bound[n] = max(old_bound, node_lower_bound(items[n], self.caps[n]))
                bound = max(max(node_bound), rest_rt[d + 1], (new_area + rest_area[d + 1]) / total)
                if bound < self.best_ms - EPS and len(items[n]) <= EXACT_LIMIT:
                    node_bound[n] = self.node_makespan(items[n], n)
                    bound = max(bound, node_bound[n])
                if bound < self.best_ms - EPS:
                    choice[i] = (n, s)
                    rec(d + 1, new_area)
                    choice[i] = None
                node_bound[n] = old_bound
                items[n].pop()
                if self.timed_out:
                    return

        rec(0, 0.0)


def _baseline_incumbent(tasks, cluster, seed):
    best = None
    for name in sorted(BASELINES):
        try:
            plan = BASELINES[name](tasks, cluster, seed)
        except SpaseError:
            continue
        ms = plan_makespan(plan, tasks)
        if best is None or ms < best[0] - EPS:
            best = (ms, plan, name)
    return best


def solve(tasks: Sequence[Task], cluster: Cluster, timeout_s: float = 300.0, seed: int = 0,
          warm_start: Plan | None = None) -> SolveOutcome:
    """Best plan found within ``timeout_s`` wall-clock seconds.

    ``warm_start`` is an optional valid plan that competes with the
    baselines for the initial incumbent. The search is single-threaded and
    deterministic whenever it finishes before the deadline.
    """
    if not timeout_s > 0:
        raise InvalidInputError("timeout_s must be positive")
    started = time.monotonic()
    by_id = check_unique_ids(tasks)
    try:
        check_schedulable(tasks, cluster)
    except UnschedulableTaskError as err:
        return _infeasible(err, started)
    if not tasks:
        return SolveOutcome(Plan({}), 0.0, PROVEN, time.monotonic() - started, 0, ((0.0, 0.0),))

    search = _Search(tasks, cluster, started + timeout_s, started)
    ms0, plan0, source = _baseline_incumbent(tasks, cluster, seed)
    if warm_start is not None:
        if validate(warm_start, tasks, cluster):
            raise InvalidInputError("warm-start plan is not valid for this workload")
        ms_w = plan_makespan(warm_start, tasks)
        if ms_w < ms0 - EPS:
            ms0, plan0, source = ms_w, warm_start, "warm-start"
    search.best_ms = ms0
    search.best_choice = [(cluster.node_index(plan0[t.id].node), plan0[t.id].config) for t in tasks]
    search.history.append((time.monotonic() - started, ms0))
    choice0 = list(search.best_choice)

    lb = lower_bound(tasks, cluster)
    if ms0 > lb + EPS:
        search.local_search()
    if search.best_ms > lb + EPS and not search.expired():
        search.branch_and_bound()

    if search.best_choice == choice0:
        plan, ms = plan0, ms0
    else:
        plan = search.to_plan(search.best_choice)
        ms = plan_makespan(plan, tasks)
        source = "search"
        if ms > ms0 + EPS:  # cannot happen with a consistent scheduler; keep the contract regardless
            plan, ms, source = plan0, ms0, "baseline"
    exhausted = not search.timed_out and not search.inexact
    status = PROVEN if (exhausted or ms <= lb + EPS) else TIMEOUT
    return SolveOutcome(plan, ms, status, time.monotonic() - started, search.nodes,
                        tuple(search.history), "", source)


# -- exhaustive oracle -------------------------------------------------------

def _subset_choices(free_at: tuple[float, ...], width: int):
    """GPU subsets of size ``width``, one per way of drawing counts from groups of
    GPUs that become free at the same instant (lowest ids in each group)."""
    groups: dict[float, list[int]] = {}
    for g, t in enumerate(free_at):
        groups.setdefault(t, []).append(g)
    keys = sorted(groups)

    def rec(k, need):
        if need == 0:
            yield ()
            return
        if k == len(keys):
            return
        members = groups[keys[k]]
        for take in range(min(need, len(members)), -1, -1):
            for rest in rec(k + 1, need - take):
                yield tuple(members[:take]) + rest
    yield from rec(0, width)


def _node_optimum(items: Sequence[tuple[int, float]], capacity: int):
    """Exact optimum on one node over every task order and GPU-subset choice."""
    best = (math.inf, None)
    if not items:
        return 0.0, []
    for perm in itertools.permutations(range(len(items))):
        def rec(pos, free_at, placed, ms):
            nonlocal best
            if ms >= best[0]:
                return
            if pos == len(perm):
                best = (ms, list(placed))
                return
            k = perm[pos]
            w, d = items[k]
            for gs in _subset_choices(free_at, w):
                start = max(free_at[g] for g in gs)
                nxt = list(free_at)
                for g in gs:
                    nxt[g] = start + d
                placed.append((k, gs, start))
                rec(pos + 1, tuple(nxt), placed, max(ms, start + d))
                placed.pop()
        rec(0, (0.0,) * capacity, [], 0.0)
    return best


def brute_force(tasks: Sequence[Task], cluster: Cluster, limit: int = 100_000, max_tasks: int = 6) -> SolveOutcome:
    """Exact optimum by exhaustive enumeration; refuses instances over the limits."""
    started = time.monotonic()
    check_unique_ids(tasks)
    combos = math.prod(len(t.configs) * len(cluster.nodes) for t in tasks)
    if len(tasks) > max_tasks or combos > limit:
        raise LimitExceededError(
            f"brute force refused: {len(tasks)} tasks (max {max_tasks}), "
            f"{combos} configuration/node combinations (max {limit})")
    try:
        check_schedulable(tasks, cluster)
    except UnschedulableTaskError as err:
        return _infeasible(err, started)
    if not tasks:
        return SolveOutcome(Plan({}), 0.0, PROVEN, time.monotonic() - started, 0)

    memo: dict = {}
    per_task = [[(s, n) for s in range(len(t.configs)) for n in range(len(cluster.nodes))] for t in tasks]
    best_ms, best_plan, explored = math.inf, None, 0
    for combo in itertools.product(*per_task):
        explored += 1
        if any(tasks[i].configs[s].gpu_count > cluster.nodes[n].gpu_count for i, (s, n) in enumerate(combo)):
            continue
        ms_total, detail = 0.0, []
        for n, node in enumerate(cluster.nodes):
            ids = [i for i, (_, m) in enumerate(combo) if m == n]
            items = tuple((tasks[i].configs[combo[i][0]].gpu_count, tasks[i].effective_runtime(combo[i][0]))
                          for i in ids)
            key = (node.gpu_count, items)
            if key not in memo:
                memo[key] = _node_optimum(items, node.gpu_count)
            ms, placed = memo[key]
            ms_total = max(ms_total, ms)
            detail.append((n, ids, placed))
        if ms_total < best_ms - EPS:
            best_ms = ms_total
            placements = {}
            for n, ids, placed in detail:
                for k, gs, start in placed:
                    i = ids[k]
                    placements[tasks[i].id] = Placement(cluster.nodes[n].id, tuple(sorted(gs)), combo[i][0], start)
            best_plan = Plan(placements)
    return SolveOutcome(best_plan, best_ms, PROVEN, time.monotonic() - started, explored, ((0.0, best_ms),),
                        "", "brute-force")


def import_solution(path, model: MilpModel, tasks: Sequence[Task], cluster: Cluster) -> SolveOutcome:
    """Wrap an externally produced MILP solution as a solve outcome."""
    started = time.monotonic()
    sol = parse_solution_text(Path(path).read_text())
    tags = check_solution(model, sol)
    if tags:
        raise SolutionRejectedError(tags)
    plan = solution_to_plan(sol, tasks, cluster)
    violations = validate(plan, tasks, cluster)
    if violations:
        raise SolutionRejectedError(sorted({v.kind for v in violations}))
    ms = plan_makespan(plan, tasks)
    return SolveOutcome(plan, ms, TIMEOUT, time.monotonic() - started, 0, ((0.0, ms),), f"imported from {path}",
                        "import")
