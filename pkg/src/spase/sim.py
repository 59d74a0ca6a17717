"""Plan validation and deterministic execution replay.

Execution intervals are half-open, ``[start, start + runtime)``, so a task
may start on a GPU at the exact instant its predecessor finishes.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ._io import atomic_write_text
from .errors import InvalidInputError, PlanInvalidError
from .workload import Cluster, Task, check_unique_ids

TOL = 1e-6

VIOLATION_KINDS = ("one-config", "one-node", "alloc-count", "unselected-node", "gang", "isolation", "bounds")


@dataclass(frozen=True)
class Placement:
    """Where and when one task runs.

    ``gpu_starts`` (aligned with ``gpus``) and ``blocked`` only appear in
    plans coming from outside the optimizer; they make per-GPU start skew and
    GPUs held on a foreign node expressible so the validator can flag them.
    """

    node: str
    gpus: tuple[int, ...]
    config: int
    start_s: float
    gpu_starts: tuple[float, ...] | None = None
    blocked: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gpus", tuple(self.gpus))
        if self.gpu_starts is not None:
            object.__setattr__(self, "gpu_starts", tuple(self.gpu_starts))
        object.__setattr__(self, "blocked", tuple(tuple(b) for b in self.blocked))

    def start_on(self, i: int) -> float:
        """Start time on the i-th listed GPU."""
        if self.gpu_starts is None:
            return self.start_s
        return self.gpu_starts[i]


@dataclass(frozen=True)
class Plan:
    placements: Mapping[str, Placement] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "placements", dict(self.placements))

    def __getitem__(self, task_id: str) -> Placement:
        return self.placements[task_id]

    def __contains__(self, task_id) -> bool:
        return task_id in self.placements

    def __len__(self) -> int:
        return len(self.placements)

    def items(self):
        return self.placements.items()


@dataclass(frozen=True)
class Violation:
    kind: str
    tasks: tuple[str, ...]
    detail: str


@dataclass(frozen=True)
class BusyInterval:
    task_id: str
    node: str
    gpu: int
    start_s: float
    end_s: float


def plan_makespan(plan: Plan, tasks: Sequence[Task]) -> float:
    by_id = {t.id: t for t in tasks}
    end = 0.0
    for tid, p in plan.items():
        r = by_id[tid].effective_runtime(p.config)
        starts = p.gpu_starts if p.gpu_starts else (p.start_s,)
        end = max(end, max(starts) + r)
    return end


def _check_ids(plan: Plan, by_id: Mapping[str, Task], cluster: Cluster) -> None:
    for tid, p in plan.items():
        if tid not in by_id:
            raise InvalidInputError(f"plan references unknown task {tid!r}")
        cluster.node(p.node)
        for node_id, _ in p.blocked:
            cluster.node(node_id)


def validate(plan: Plan, tasks: Sequence[Task], cluster: Cluster, tol: float = TOL) -> list[Violation]:
    """Every way ``plan`` breaks the scheduling rules; empty when feasible."""
    by_id = check_unique_ids(tasks)
    _check_ids(plan, by_id, cluster)
    out: list[Violation] = []
    # (node, gpu) -> [(start, end, task_id)]
    occupancy: dict[tuple[str, int], list[tuple[float, float, str]]] = {}

    for task in tasks:
        p = plan.placements.get(task.id)
        if p is None:
            out.append(Violation("one-config", (task.id,), "task has no placement, so no configuration is selected"))
            out.append(Violation("one-node", (task.id,), "task has no placement, so no node is selected"))
            continue
        node = cluster.node(p.node)
        config_ok = 0 <= p.config < len(task.configs)
        if not config_ok:
            out.append(Violation("one-config", (task.id,), f"config index {p.config} outside 0..{len(task.configs) - 1}"))

        bad = []
        if not math.isfinite(p.start_s) or p.start_s < -tol:
            bad.append(f"start {p.start_s} is negative or not finite")
        if p.gpu_starts is not None:
            if len(p.gpu_starts) != len(p.gpus):
                raise InvalidInputError(f"task {task.id!r}: gpu_starts and gpus differ in length")
            if any(not math.isfinite(s) or s < -tol for s in p.gpu_starts):
                bad.append("a per-GPU start is negative or not finite")
        out_of_range = [g for g in p.gpus if not 0 <= g < node.gpu_count]
        if out_of_range:
            bad.append(f"GPU id(s) {out_of_range} do not exist on node {p.node!r}")
        if len(set(p.gpus)) != len(p.gpus):
            bad.append(f"GPU ids {p.gpus} repeat")
        if bad:
            out.append(Violation("bounds", (task.id,), "; ".join(bad)))

        held = {g for g in p.gpus if 0 <= g < node.gpu_count}
        own_blocked = {g for n_id, g in p.blocked if n_id == p.node and 0 <= g < node.gpu_count}
        held |= own_blocked
        if config_ok and len(held) != task.configs[p.config].gpu_count:
            out.append(Violation(
                "alloc-count", (task.id,),
                f"holds {len(held)} GPU(s) but configuration {p.config} needs {task.configs[p.config].gpu_count}",
            ))
        foreign = sorted({(n_id, g) for n_id, g in p.blocked
                          if n_id != p.node and 0 <= g < cluster.node(n_id).gpu_count})
        if foreign:
            out.append(Violation("unselected-node", (task.id,), f"blocks GPUs {foreign} on unselected node(s)"))
        if p.gpu_starts is not None and p.gpu_starts and max(p.gpu_starts) - min(p.gpu_starts) > tol:
            out.append(Violation("gang", (task.id,), f"GPUs start at different times {p.gpu_starts}"))

        if not config_ok:
            continue
        r = task.effective_runtime(p.config)
        for i, g in enumerate(p.gpus):
            if 0 <= g < node.gpu_count:
                s = p.start_on(i)
                occupancy.setdefault((p.node, g), []).append((s, s + r, task.id))
        for g in own_blocked - set(p.gpus):
            occupancy.setdefault((p.node, g), []).append((p.start_s, p.start_s + r, task.id))
        for n_id, g in foreign:
            occupancy.setdefault((n_id, g), []).append((p.start_s, p.start_s + r, task.id))

    clashes: dict[tuple[str, str], list[tuple[str, int]]] = {}
    for key in sorted(occupancy):
        ivs = sorted(occupancy[key])
        for i in range(len(ivs)):
            s1, e1, a = ivs[i]
            for j in range(i + 1, len(ivs)):
                s2, e2, b = ivs[j]
                if s2 >= e1 - tol:
                    break
                if a != b:
                    clashes.setdefault(tuple(sorted((a, b))), []).append(key)
    for pair in sorted(clashes):
        out.append(Violation("isolation", pair, f"overlap on GPU(s) {sorted(set(clashes[pair]))}"))
    return out


def plan_intervals(plan: Plan, tasks: Sequence[Task]) -> list[BusyInterval]:
    by_id = {t.id: t for t in tasks}
    out = []
    for tid in sorted(plan.placements):
        p = plan[tid]
        r = by_id[tid].effective_runtime(p.config)
        for i, g in enumerate(p.gpus):
            s = p.start_on(i)
            out.append(BusyInterval(tid, p.node, g, s, s + r))
    return out


@dataclass(frozen=True)
class ExecutionMetrics:
    makespan_s: float
    busy: Mapping[tuple[str, int], tuple[tuple[float, float, str], ...]]
    timeline: tuple[tuple[float, int], ...]
    total_gpus: int
    sample_rate_s: float

    @property
    def utilization(self) -> list[float]:
        return [b / self.total_gpus for _, b in self.timeline]

    @property
    def mean_utilization(self) -> float:
        u = self.utilization
        return sum(u) / len(u) if u else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time_s,busy_gpus,total_gpus,utilization\n")
        for t, b in self.timeline:
            buf.write(f"{t:.6f},{b},{self.total_gpus},{b / self.total_gpus:.6f}\n")
        return buf.getvalue()

    def save_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())


def metrics_from_intervals(intervals: Sequence[BusyInterval], cluster: Cluster,
                           sample_rate_s: float = 100.0) -> ExecutionMetrics:
    if sample_rate_s <= 0:
        raise InvalidInputError("sample_rate_s must be positive")
    busy: dict[tuple[str, int], list[tuple[float, float, str]]] = {}
    for iv in intervals:
        busy.setdefault((iv.node, iv.gpu), []).append((iv.start_s, iv.end_s, iv.task_id))
    busy_sorted = {k: tuple(sorted(v)) for k, v in sorted(busy.items())}
    makespan = max((iv.end_s for iv in intervals), default=0.0)
    timeline = []
    k = 0
    while k * sample_rate_s < makespan:
        t = k * sample_rate_s
        n_busy = sum(1 for ivs in busy_sorted.values() if any(s <= t < e for s, e, _ in ivs))
        timeline.append((t, n_busy))
        k += 1
    return ExecutionMetrics(makespan, busy_sorted, tuple(timeline), cluster.total_gpus, sample_rate_s)


def simulate(plan_or_schedule, tasks: Sequence[Task], cluster: Cluster,
             sample_rate_s: float = 100.0) -> ExecutionMetrics:
    """Replay a plan (or an introspective schedule) and sample GPU utilization.

    Schedules are accepted duck-typed: anything exposing ``intervals`` as a
    sequence of :class:`BusyInterval`. Their segments are validated when the
    schedule is built, so only plans are validated here.
    """
    if isinstance(plan_or_schedule, Plan):
        violations = validate(plan_or_schedule, tasks, cluster)
        if violations:
            raise PlanInvalidError(violations)
        intervals = plan_intervals(plan_or_schedule, tasks)
    else:
        intervals = list(plan_or_schedule.intervals)
    return metrics_from_intervals(intervals, cluster, sample_rate_s)


def placement_to_dict(task_id: str, p: Placement) -> dict:
    d = {"task": task_id, "node": p.node, "gpus": list(p.gpus), "config": p.config, "start_s": p.start_s}
    if p.gpu_starts is not None:
        d["gpu_starts"] = list(p.gpu_starts)
    if p.blocked:
        d["blocked"] = [list(b) for b in p.blocked]
    return d


def plan_to_list(plan: Plan) -> list[dict]:
    return [placement_to_dict(tid, plan[tid]) for tid in sorted(plan.placements)]


def plan_from_list(rows) -> Plan:
    out = {}
    for row in rows:
        blocked = tuple((b[0], int(b[1])) for b in row.get("blocked", ()))
        gs = row.get("gpu_starts")
        out[row["task"]] = Placement(row["node"], tuple(int(g) for g in row["gpus"]), int(row["config"]),
                                     float(row["start_s"]), tuple(gs) if gs is not None else None, blocked)
    return Plan(out)


def format_plan(plan: Plan, tasks: Sequence[Task]) -> str:
    by_id = {t.id: t for t in tasks}
    lines = []
    for tid in sorted(plan.placements, key=lambda k: (plan[k].start_s, k)):
        p = plan[tid]
        cfg = by_id[tid].configs[p.config]
        end = p.start_s + by_id[tid].effective_runtime(p.config)
        gpus = ",".join(str(g) for g in p.gpus)
        lines.append(f"{tid}\t{p.node}\tgpus={gpus}\t{cfg.parallelism}x{cfg.gpu_count}\t"
                     f"start={p.start_s:.6f}\tend={end:.6f}")
    return "\n".join(lines)
