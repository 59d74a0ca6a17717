"""Comparison schedulers: Max-, Min-, Randomized and Optimus*-Greedy.

Every baseline decides GPU counts (and a node) per task, picks the fastest
parallelism for that count post hoc, and hands the result to the same LPT
list scheduler.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .errors import InvalidInputError, UnschedulableTaskError
from .scheduling import assign_gpus, serial_schedule
from .sim import Placement, Plan
from .workload import Cluster, Node, Task, best_config_index, check_unique_ids


@dataclass(frozen=True)
class Allocation:
    """GPU count and node per task; a node may be oversubscribed (tasks queue)."""

    gpus: Mapping[str, int]
    nodes: Mapping[str, str]
    saturated: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        for tid, g in self.gpus.items():
            if g < 1:
                raise InvalidInputError(f"allocation for {tid!r} must be >= 1")


class GreedyAllocation(list):
    """Per-task GPU counts from Optimus*-Greedy.

    ``stopped_early`` is set when no task could take another GPU before the
    budget was spent.
    """

    stopped_early = False


def _require_single_gpu(tasks: Sequence[Task], who: str) -> None:
    for t in tasks:
        if not any(c.gpu_count == 1 for c in t.configs):
            raise InvalidInputError(f"{who} needs a 1-GPU configuration for every task; {t.id!r} has none")


def _best_runtime(task: Task, gpus: int) -> float | None:
    rts = [task.effective_runtime(s) for s, c in enumerate(task.configs) if c.gpu_count == gpus]
    return min(rts) if rts else None


def optimus_greedy(tasks: Sequence[Task], G: int) -> GreedyAllocation:
    """Give each task one GPU, then repeatedly hand the next GPU to the task
    whose best runtime drops the most by receiving it."""
    if G < len(tasks):
        raise InvalidInputError(f"Optimus*-Greedy needs at least one GPU per task ({G} < {len(tasks)})")
    _require_single_gpu(tasks, "Optimus*-Greedy")
    L = GreedyAllocation([1] * len(tasks))
    while sum(L) < G:
        best_gain, best_t = -math.inf, None
        for t, (task, l) in enumerate(zip(tasks, L)):
            cur, nxt = _best_runtime(task, l), _best_runtime(task, l + 1)
            gain = -math.inf if nxt is None else cur - nxt
            if gain > best_gain:
                best_gain, best_t = gain, t
        if best_t is None:
            L.stopped_early = True
            break
        L[best_t] += 1
    return L


def distribute_tasks(tasks: Sequence[Task], cluster: Cluster, seed: int = 0,
                     eligible: Callable[[Task, Node], bool] | None = None) -> dict[str, str]:
    """Random node per task, each node weighted by its GPU count.

    ``eligible`` narrows the candidate nodes per task before drawing.
    """
    rng = random.Random(seed)
    out = {}
    for t in tasks:
        cands = [n for n in cluster.nodes if eligible is None or eligible(t, n)]
        if not cands:
            raise UnschedulableTaskError(t.id, "no eligible node")
        if len(cluster.nodes) == 1:
            out[t.id] = cands[0].id
            continue
        out[t.id] = rng.choices(cands, weights=[n.gpu_count for n in cands])[0].id
    return out


def list_schedule(choices: Mapping[str, tuple[str, int]], tasks: Sequence[Task], cluster: Cluster,
                  order: Sequence[str] | None = None) -> Plan:
    """Plan from per-task (node, config index) choices.

    Tasks are placed one by one at the earliest instant enough GPUs are free
    on their node; the default order is longest effective runtime first.
    """
    by_id = check_unique_ids(tasks)
    if order is None:
        order = sorted(choices, key=lambda tid: -by_id[tid].effective_runtime(choices[tid][1]))
    placements = {}
    for node in cluster.nodes:
        ids = [tid for tid in order if choices[tid][0] == node.id]
        items = [(by_id[tid].configs[choices[tid][1]].gpu_count, by_id[tid].effective_runtime(choices[tid][1]))
                 for tid in ids]
        _, starts = serial_schedule(items, node.gpu_count, range(len(items)))
        gpus = assign_gpus(items, starts, node.gpu_count)
        for k, tid in enumerate(ids):
            placements[tid] = Placement(node.id, gpus[k], choices[tid][1], starts[k])
    return Plan(placements)


def allocations_to_plan(alloc: Allocation, tasks: Sequence[Task], cluster: Cluster) -> Plan:
    by_id = check_unique_ids(tasks)
    choices = {tid: (alloc.nodes[tid], best_config_index(by_id[tid], g)) for tid, g in alloc.gpus.items()}
    return list_schedule(choices, tasks, cluster)


def _tasks_per_node(tasks: Sequence[Task], nodes: Mapping[str, str], cluster: Cluster) -> dict[str, list[Task]]:
    groups: dict[str, list[Task]] = {n.id: [] for n in cluster.nodes}
    for t in tasks:
        groups[nodes[t.id]].append(t)
    return groups


def max_allocation(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Allocation:
    def full_width(t: Task, n: Node) -> bool:
        return any(c.gpu_count == n.gpu_count for c in t.configs)

    for t in tasks:
        if not any(full_width(t, n) for n in cluster.nodes):
            raise UnschedulableTaskError(t.id, "no configuration uses a whole node")
    nodes = distribute_tasks(tasks, cluster, seed, eligible=full_width)
    return Allocation({t.id: cluster.node(nodes[t.id]).gpu_count for t in tasks}, nodes)


def max_heuristic(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Plan:
    """Every task takes a whole node; tasks sharing a node run one after another."""
    return allocations_to_plan(max_allocation(tasks, cluster, seed), tasks, cluster)


def min_allocation(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Allocation:
    _require_single_gpu(tasks, "Min-Heuristic")
    nodes = distribute_tasks(tasks, cluster, seed)
    gpus = {}
    for node_id, group in _tasks_per_node(tasks, nodes, cluster).items():
        cap = cluster.node(node_id).gpu_count
        counts = [1] * len(group)
        widest = [max(c.gpu_count for c in t.configs if c.gpu_count <= cap) for t in group]
        surplus = cap - len(group)
        while surplus > 0 and any(c < w for c, w in zip(counts, widest)):
            for k in range(len(group)):
                if surplus == 0:
                    break
                if counts[k] < widest[k]:
                    counts[k] += 1
                    surplus -= 1
        for t, c in zip(group, counts):
            # A count with no profiled configuration falls back to the widest one below it.
            gpus[t.id] = max(cfg.gpu_count for cfg in t.configs if cfg.gpu_count <= c)
    return Allocation(gpus, nodes)


def min_heuristic(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Plan:
    """One GPU per task, leftover GPUs on a node shared out round-robin."""
    return allocations_to_plan(min_allocation(tasks, cluster, seed), tasks, cluster)


def optimus_allocation(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Allocation:
    _require_single_gpu(tasks, "Optimus*-Greedy")
    nodes = distribute_tasks(tasks, cluster, seed)
    gpus, saturated = {}, set()
    for node_id, group in _tasks_per_node(tasks, nodes, cluster).items():
        if not group:
            continue
        cap = cluster.node(node_id).gpu_count
        if len(group) >= cap:
            L = [1] * len(group)
        else:
            L = optimus_greedy(group, cap)
            if L.stopped_early:
                saturated.add(node_id)
        gpus.update({t.id: l for t, l in zip(group, L)})
    return Allocation(gpus, nodes, frozenset(saturated))


def optimus_plan(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Plan:
    """Optimus*-Greedy run one node at a time, then LPT list scheduling."""
    return allocations_to_plan(optimus_allocation(tasks, cluster, seed), tasks, cluster)


def randomized(tasks: Sequence[Task], cluster: Cluster, seed: int = 0) -> Plan:
    """Random feasible configuration per task, random node (GPU-weighted), random order."""
    rng = random.Random(seed)
    choices = {}
    for t in tasks:
        fitting = [s for s, c in enumerate(t.configs) if c.gpu_count <= cluster.max_gpus]
        if not fitting:
            raise UnschedulableTaskError(t.id)
        s = fitting[rng.randrange(len(fitting))]
        cands = [n for n in cluster.nodes if n.gpu_count >= t.configs[s].gpu_count]
        node = cands[0] if len(cands) == 1 else rng.choices(cands, weights=[n.gpu_count for n in cands])[0]
        choices[t.id] = (node.id, s)
    order = [t.id for t in tasks]
    rng.shuffle(order)
    return list_schedule(choices, tasks, cluster, order)


BASELINES: dict[str, Callable[[Sequence[Task], Cluster, int], Plan]] = {
    "max": max_heuristic,
    "min": min_heuristic,
    "random": randomized,
    "optimus": optimus_plan,
}
