"""Periodic re-solving of a running workload.

Execution proceeds in rounds of ``interval_s`` seconds. After each round the
workload is advanced to its residual state, pending events are applied and
the solver is asked for a fresh plan, which replaces the running one only
if it finishes at least ``tolerance_s`` earlier.

The running plan is kept in the time frame in which it was adopted, and
every residual workload is derived from that frame directly. Rounds that
keep the old plan therefore reproduce its timing exactly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from ._io import atomic_write_text
from .errors import EventError, InvalidInputError, ParseError, UnschedulableTaskError
from .sim import BusyInterval, Placement, Plan, plan_makespan, plan_to_list, validate
from .solver import INFEASIBLE, solve
from .workload import Cluster, Task, check_unique_ids, cluster_to_list, task_from_dict, task_to_dict

DONE_TOL = 1e-9
MAX_ROUNDS = 100_000


@dataclass(frozen=True)
class IntrospectionConfig:
    """Knobs of the round loop.

    By default the adoption test scores a proposal after its switch
    overheads are charged; ``compare_with_overhead=False`` scores the raw
    proposal instead.
    """

    interval_s: float = 1000.0
    tolerance_s: float = 500.0
    switch_overhead_s: float = 0.0
    overlap: bool = False
    solver_timeout_s: float = 300.0
    compare_with_overhead: bool = True

    def __post_init__(self):
        if not self.interval_s > 0 or math.isinf(self.interval_s):
            raise InvalidInputError("interval_s must be positive and finite")
        if not self.tolerance_s >= 0:
            raise InvalidInputError("tolerance_s must be >= 0")
        if not self.switch_overhead_s >= 0:
            raise InvalidInputError("switch_overhead_s must be >= 0")
        if not self.solver_timeout_s > 0:
            raise InvalidInputError("solver_timeout_s must be positive")


@dataclass(frozen=True)
class WorkloadEvent:
    at_round: int
    kind: str  # "early-stop" | "arrival"
    task_id: str | None = None
    task: Task | None = None

    def __post_init__(self):
        if self.at_round < 0:
            raise EventError("event round must be >= 0")
        if self.kind == "early-stop":
            if not self.task_id:
                raise EventError("early-stop event needs a task id")
        elif self.kind == "arrival":
            if self.task is None:
                raise EventError("arrival event needs a task")
        else:
            raise EventError(f"unknown event kind {self.kind!r}")

    @classmethod
    def stop(cls, at_round: int, task_id: str) -> "WorkloadEvent":
        return cls(at_round, "early-stop", task_id=task_id)

    @classmethod
    def arrive(cls, at_round: int, task: Task) -> "WorkloadEvent":
        return cls(at_round, "arrival", task_id=task.id, task=task)


@dataclass(frozen=True)
class Segment:
    """One executed interval.

    ``plan`` is the running plan in the segment's own frame (time 0 is the
    segment start), restricted to tasks that start before the segment ends.
    ``workload`` is the residual workload at the segment start and
    ``executed`` the fraction of each task's full work done in the segment.
    """

    round: int
    offset_s: float
    plan: Plan
    workload: tuple[Task, ...]
    executed: Mapping[str, float]
    adopted: bool
    intervals: tuple[BusyInterval, ...] = ()


@dataclass(frozen=True)
class E2ESchedule:
    segments: tuple[Segment, ...]
    makespan: float
    one_shot_makespan: float
    cluster: Cluster
    interval_s: float
    completed: tuple[str, ...] = ()
    stopped: tuple[str, ...] = ()

    @property
    def intervals(self) -> list[BusyInterval]:
        return [iv for seg in self.segments for iv in seg.intervals]

    @property
    def adoptions(self) -> int:
        return sum(1 for seg in self.segments if seg.adopted)

    def to_dict(self) -> dict:
        return {
            "cluster": cluster_to_list(self.cluster),
            "interval_s": self.interval_s,
            "makespan_s": self.makespan,
            "one_shot_makespan_s": self.one_shot_makespan,
            "segments": [
                {
                    "round": seg.round,
                    "offset_s": seg.offset_s,
                    "adopted": seg.adopted,
                    "tasks": [task_to_dict(t) for t in seg.workload],
                    "plan": plan_to_list(seg.plan),
                    "executed": dict(sorted(seg.executed.items())),
                }
                for seg in self.segments
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def save(self, path) -> None:
        atomic_write_text(path, self.dumps())


def advance(tasks: Sequence[Task], plan: Plan, seconds: float) -> tuple[list[Task], list[str]]:
    """Residual workload after running ``plan`` for ``seconds``.

    Pending switch overhead is worked off before real progress. Tasks absent
    from the plan are returned unchanged.
    """
    if seconds < 0:
        raise InvalidInputError("seconds must be >= 0")
    by_id = check_unique_ids(tasks)
    for tid in plan.placements:
        if tid not in by_id:
            raise InvalidInputError(f"plan references unknown task {tid!r}")
    residual, completed = [], []
    for t in tasks:
        p = plan.placements.get(t.id)
        if p is None:
            residual.append(t)
            continue
        eff = t.effective_runtime(p.config)
        start = max(0.0, p.start_s)
        if start + eff <= seconds + DONE_TOL:
            completed.append(t.id)
            continue
        active = max(0.0, min(seconds, start + eff) - start)
        if active == 0.0:
            residual.append(t)
            continue
        spent_overhead = min(active, t.overhead_s)
        work = active - spent_overhead
        frac = t.remaining_fraction - work / t.configs[p.config].runtime_s
        if frac <= DONE_TOL:
            completed.append(t.id)
            continue
        residual.append(replace(t, remaining_fraction=min(frac, 1.0), overhead_s=t.overhead_s - spent_overhead))
    return residual, completed


def _rebase(plan: Plan, tasks: Sequence[Task], elapsed: float) -> Plan:
    """Running plan seen from ``elapsed`` seconds after its origin, restricted to ``tasks``."""
    ids = {t.id for t in tasks}
    out = {}
    for tid, p in plan.items():
        if tid in ids:
            out[tid] = Placement(p.node, p.gpus, p.config, max(0.0, p.start_s - elapsed))
    return Plan(out)


def _retime(plan: Plan, tasks: Sequence[Task]) -> Plan:
    """Left-justify a plan whose runtimes grew, keeping its start order and GPU sets."""
    by_id = {t.id: t for t in tasks}
    free: dict[tuple[str, int], float] = {}
    out = {}
    for tid in sorted(plan.placements, key=lambda k: (plan[k].start_s, k)):
        p = plan[tid]
        start = max((free.get((p.node, g), 0.0) for g in p.gpus), default=0.0)
        end = start + by_id[tid].effective_runtime(p.config)
        for g in p.gpus:
            free[(p.node, g)] = end
        out[tid] = Placement(p.node, p.gpus, p.config, start)
    return Plan(out)


def _changed(old: Placement | None, new: Placement) -> bool:
    if old is None:
        return False
    return (old.config, old.node, tuple(sorted(old.gpus))) != (new.config, new.node, tuple(sorted(new.gpus)))


def _apply_events(tasks: list[Task], events: Sequence[WorkloadEvent], finished: set[str], k: int):
    """Apply this round's events; returns (tasks, stopped ids, arrived?)."""
    stopped, arrived = [], False
    tasks = list(tasks)
    for ev in events:
        ids = [t.id for t in tasks]
        if ev.kind == "early-stop":
            if ev.task_id not in ids:
                state = "already finished" if ev.task_id in finished else "unknown"
                raise EventError(f"round {k}: cannot stop task {ev.task_id!r} ({state})")
            tasks = [t for t in tasks if t.id != ev.task_id]
            stopped.append(ev.task_id)
        else:
            if ev.task.id in ids or ev.task.id in finished:
                raise EventError(f"round {k}: task id {ev.task.id!r} is already in use")
            tasks.append(ev.task)
            arrived = True
    return tasks, stopped, arrived


def _solve_round(tasks, cluster, cfg, seed):
    out = solve(tasks, cluster, cfg.solver_timeout_s, seed)
    if out.status == INFEASIBLE:
        raise UnschedulableTaskError(out.unschedulable)
    return out


def round_introspection(tasks: Sequence[Task], cluster: Cluster, cfg: IntrospectionConfig | None = None,
                        events: Sequence[WorkloadEvent] = (), seed: int = 0) -> E2ESchedule:
    """Execute ``tasks`` with re-solving at every interval boundary."""
    cfg = cfg or IntrospectionConfig()
    check_unique_ids(tasks)
    for ev in events:
        if not isinstance(ev, WorkloadEvent):
            raise EventError(f"not a workload event: {ev!r}")
    pending: dict[int, list[WorkloadEvent]] = {}
    for ev in events:
        pending.setdefault(ev.at_round, []).append(ev)

    I = cfg.interval_s
    finished: set[str] = set()
    stopped_all: list[str] = []
    completed_all: list[str] = []
    work, stopped, _ = _apply_events(list(tasks), pending.pop(0, ()), finished, 0)
    finished.update(stopped)
    stopped_all += stopped

    segments: list[Segment] = []
    if not work and not pending:
        return E2ESchedule((), 0.0, 0.0, cluster, I)

    executor = ThreadPoolExecutor(max_workers=1) if cfg.overlap else None
    try:
        k = 0
        base, plan, origin = list(work), Plan({}), 0.0
        one_shot = 0.0
        if work:
            first = _solve_round(work, cluster, cfg, seed)
            plan, one_shot = first.plan, first.makespan
        M = plan_makespan(plan, base)
        adopted = True
        makespan = 0.0
        while True:
            if k > MAX_ROUNDS:
                raise InvalidInputError("introspection did not converge; check interval and overhead settings")
            offset = k * I
            elapsed = offset - origin
            seg_plan = _rebase(plan, work, elapsed)
            next_work, done = advance(base, plan, elapsed + I)
            future = None
            if executor is not None and next_work:
                future = executor.submit(_solve_round, next_work, cluster, cfg, seed)

            pieces = []
            for tid, p in plan.items():
                if tid not in seg_plan:
                    continue
                t = next(x for x in base if x.id == tid)
                s, e = origin + p.start_s, origin + p.start_s + t.effective_runtime(p.config)
                lo, hi = max(s, offset), min(e, offset + I)
                if lo < hi:
                    makespan = max(makespan, hi)
                    pieces += [BusyInterval(tid, p.node, g, lo, hi) for g in p.gpus]
            before = {t.id: t.remaining_fraction for t in work}
            after = {t.id: t.remaining_fraction for t in next_work}
            executed = {tid: before[tid] - after.get(tid, 0.0) for tid in before
                        if before[tid] - after.get(tid, 0.0) > 0}
            window = {tid: p for tid, p in seg_plan.items() if p.start_s < I}
            if work:
                segments.append(Segment(k, offset, Plan(window), tuple(work), executed, adopted,
                                        tuple(sorted(pieces, key=lambda iv: (iv.node, iv.gpu, iv.start_s)))))
            new_done = [tid for tid in done if tid not in finished]
            completed_all += new_done
            finished.update(new_done)
            M = max(0.0, M - I)

            k += 1
            work, stopped, arrived = _apply_events(next_work, pending.pop(k, ()), finished, k)
            if stopped:
                finished.update(stopped)
                stopped_all += stopped
                base = [t for t in base if t.id not in stopped]
                plan = Plan({tid: p for tid, p in plan.items() if tid not in stopped})
                M = max(0.0, plan_makespan(_rebase(plan, work, offset + I - origin), work)) if work else 0.0
            if not work:
                if future is not None:
                    future.result()
                    future = None
                if not pending:
                    break
                # the cluster idles until the next arrival
                k = min(pending)
                work, _, arrived = _apply_events([], pending.pop(k), finished, k)
                base, plan, origin, M = [], Plan({}), k * I, 0.0

            if future is not None and not stopped and not arrived:
                proposal = future.result()
            else:
                if future is not None:
                    future.result()  # stale: events changed the workload at this boundary
                proposal = _solve_round(work, cluster, cfg, seed)
            new_plan = proposal.plan
            if cfg.switch_overhead_s > 0:
                current = _rebase(plan, work, offset + I - origin)
                charged = {tid for tid, p in new_plan.items()
                           if _changed(current.placements.get(tid), p)
                           and next(t for t in work if t.id == tid).remaining_fraction < 1.0}
                charged_work = [replace(t, overhead_s=t.overhead_s + cfg.switch_overhead_s) if t.id in charged else t
                                for t in work]
                charged_plan = _retime(new_plan, charged_work) if charged else new_plan
            else:
                charged_work, charged_plan = work, new_plan
            charged_ms = plan_makespan(charged_plan, charged_work)
            score = charged_ms if cfg.compare_with_overhead else proposal.makespan
            if arrived or not base or score <= M - cfg.tolerance_s:
                work = charged_work
                base, plan, origin, M = list(work), charged_plan, k * I, charged_ms
                adopted = True
            else:
                adopted = False
    finally:
        if executor is not None:
            executor.shutdown(wait=True)
    return E2ESchedule(tuple(segments), makespan, one_shot, cluster, I, tuple(completed_all), tuple(stopped_all))


def overlap_round(tasks: Sequence[Task], plan: Plan, cfg: IntrospectionConfig, cluster: Cluster, seed: int = 0):
    """Proposal for the next round, solved on the state one interval ahead."""
    residual, _ = advance(tasks, plan, cfg.interval_s)
    if not residual:
        return None
    return _solve_round(residual, cluster, cfg, seed)


def segment_violations(schedule: E2ESchedule):
    """Validator output for every segment's plan against its residual workload."""
    out = []
    for seg in schedule.segments:
        ids = set(seg.plan.placements)
        tasks = [t for t in seg.workload if t.id in ids]
        out.append(validate(seg.plan, tasks, schedule.cluster))
    return out


# -- events file ----------------------------------------------------------

def events_from_rows(rows) -> list[WorkloadEvent]:
    if not isinstance(rows, list):
        raise ParseError("events", "expected a list of event rows")
    out = []
    for k, row in enumerate(rows):
        path = f"events[{k}]"
        if not isinstance(row, dict) or set(row) - {"round", "action", "payload"} or "round" not in row:
            raise ParseError(path, "expected an object with round, action and payload")
        rnd, action, payload = row["round"], row.get("action"), row.get("payload")
        if not isinstance(rnd, int) or isinstance(rnd, bool) or rnd < 0:
            raise ParseError(f"{path}.round", "must be a non-negative integer")
        if action == "stop":
            if not isinstance(payload, str):
                raise ParseError(f"{path}.payload", "stop needs a task id string")
            out.append(WorkloadEvent.stop(rnd, payload))
        elif action == "add":
            if not isinstance(payload, dict):
                raise ParseError(f"{path}.payload", "add needs a task object")
            out.append(WorkloadEvent.arrive(rnd, task_from_dict(payload, f"{path}.payload")))
        else:
            raise ParseError(f"{path}.action", f"must be 'stop' or 'add', got {action!r}")
    return out


def events_to_rows(events: Sequence[WorkloadEvent]) -> list[dict]:
    rows = []
    for ev in events:
        if ev.kind == "early-stop":
            rows.append({"round": ev.at_round, "action": "stop", "payload": ev.task_id})
        else:
            rows.append({"round": ev.at_round, "action": "add", "payload": task_to_dict(ev.task)})
    return rows


def load_events(path) -> list[WorkloadEvent]:
    with open(path) as fh:
        try:
            rows = json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(str(path), f"not valid JSON: {err}") from None
    return events_from_rows(rows)
