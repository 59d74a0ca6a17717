"""Single-node schedule construction.

On one node GPUs are interchangeable, so a set of rigid gang tasks is
feasible exactly when the number of busy GPUs never exceeds the node's
capacity. Start times are therefore computed against a cumulative usage
profile, and concrete GPU ids are handed out afterwards by a sweep in start
order that always gives a task the lowest free ids.
"""

from __future__ import annotations

import heapq
from bisect import bisect_right
from typing import Sequence

from .errors import InvalidInputError

# (width, duration)
Item = tuple[int, float]

EXACT_LIMIT = 6


class Profile:
    """Step function of GPUs in use over time."""

    __slots__ = ("capacity", "times", "usage")

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.times = [0.0]
        self.usage = [0]

    def copy(self) -> "Profile":
        p = Profile.__new__(Profile)
        p.capacity = self.capacity
        p.times = self.times[:]
        p.usage = self.usage[:]
        return p

    def earliest(self, width: int, duration: float) -> float:
        """Earliest start with ``width`` GPUs free for ``duration`` seconds."""
        if width > self.capacity:
            raise InvalidInputError(f"width {width} exceeds node capacity {self.capacity}")
        limit = self.capacity - width
        times, usage = self.times, self.usage
        n = len(times)
        i = 0
        while i < n:
            if usage[i] > limit:
                i += 1
                continue
            t = times[i]
            end = t + duration
            j = i + 1
            while j < n and times[j] < end:
                if usage[j] > limit:
                    break
                j += 1
            else:
                return t
            i = j + 1
        return times[-1]

    def _split(self, t: float) -> int:
        k = bisect_right(self.times, t) - 1
        if self.times[k] != t:
            self.times.insert(k + 1, t)
            self.usage.insert(k + 1, self.usage[k])
            k += 1
        return k

    def add(self, start: float, duration: float, width: int) -> None:
        a = self._split(start)
        b = self._split(start + duration)
        for k in range(a, b):
            self.usage[k] += width


def serial_schedule(items: Sequence[Item], capacity: int, order: Sequence[int]) -> tuple[float, list[float]]:
    """Place items in ``order``, each at its earliest feasible start."""
    prof = Profile(capacity)
    starts = [0.0] * len(items)
    makespan = 0.0
    for k in order:
        w, d = items[k]
        t = prof.earliest(w, d)
        prof.add(t, d, w)
        starts[k] = t
        makespan = max(makespan, t + d)
    return makespan, starts


def assign_gpus(items: Sequence[Item], starts: Sequence[float], capacity: int) -> list[tuple[int, ...]]:
    """Concrete GPU ids for a cumulatively feasible schedule."""
    order = sorted(range(len(items)), key=lambda k: (starts[k], k))
    free = list(range(capacity))
    heapq.heapify(free)
    running: list[tuple[float, int, tuple[int, ...]]] = []
    out: list[tuple[int, ...]] = [()] * len(items)
    for k in order:
        w, d = items[k]
        while running and running[0][0] <= starts[k]:
            _, _, gs = heapq.heappop(running)
            for g in gs:
                heapq.heappush(free, g)
        if len(free) < w:
            raise InvalidInputError("schedule exceeds node capacity")
        gs = tuple(sorted(heapq.heappop(free) for _ in range(w)))
        out[k] = gs
        heapq.heappush(running, (starts[k] + d, k, gs))
    return out


def node_lower_bound(items: Sequence[Item], capacity: int) -> float:
    if not items:
        return 0.0
    return max(max(d for _, d in items), sum(w * d for w, d in items) / capacity)


RULES = (
    lambda it: (-it[1], -it[0]),          # longest first
    lambda it: (-it[0] * it[1], -it[1]),  # largest GPU-seconds first
    lambda it: (-it[0], -it[1]),          # widest first
)


def heuristic_schedule(items: Sequence[Item], capacity: int) -> tuple[float, list[float]]:
    """Best of a few priority-rule list schedules (LPT first)."""
    best = None
    for rule in RULES:
        order = sorted(range(len(items)), key=lambda k: (*rule(items[k]), k))
        res = serial_schedule(items, capacity, order)
        if best is None or res[0] < best[0]:
            best = res
    return best


def lpt_order(items: Sequence[Item]) -> list[int]:
    return sorted(range(len(items)), key=lambda k: (-items[k][1], k))


def exact_schedule(items: Sequence[Item], capacity: int) -> tuple[float, list[float]]:
    """Optimal makespan by enumerating every distinct placement order.

    Serial schedule generation over all orders reaches every active
    schedule, and an optimal schedule is always among the active ones.
    """
    n = len(items)
    if n == 0:
        return 0.0, []
    lb = node_lower_bound(items, capacity)
    # Identical items are interchangeable: enumerate orders of item types.
    types: dict[Item, list[int]] = {}
    for k, it in enumerate(items):
        types.setdefault(it, []).append(k)
    kinds = sorted(types, key=lambda it: (-it[1], -it[0]))
    remaining = [len(types[k]) for k in kinds]
    fallback = heuristic_schedule(items, capacity)
    if fallback[0] <= lb + 1e-12:
        return fallback
    best_ms, best_seq = fallback[0], None
    seq: list[int] = []

    def rec(prof: Profile, ms: float) -> bool:
        nonlocal best_ms, best_seq
        if len(seq) == n:
            best_ms, best_seq = ms, seq[:]
            return best_ms <= lb + 1e-12
        # The profile only fills up, so each remaining kind finishes no earlier
        # than its earliest slot right now.
        ends = {}
        for ki, (w, d) in enumerate(kinds):
            if remaining[ki]:
                t = prof.earliest(w, d)
                ends[ki] = (t, max(ms, t + d))
        if max(e for _, e in ends.values()) >= best_ms - 1e-12:
            return False
        for ki, (t, end) in ends.items():
            w, d = kinds[ki]
            nxt = prof.copy()
            nxt.add(t, d, w)
            remaining[ki] -= 1
            seq.append(ki)
            done = rec(nxt, end)
            seq.pop()
            remaining[ki] += 1
            if done:
                return True
        return False

    rec(Profile(capacity), 0.0)
    if best_seq is None:
        return fallback
    pools = {ki: iter(types[kind]) for ki, kind in enumerate(kinds)}
    order = [next(pools[ki]) for ki in best_seq]
    return serial_schedule(items, capacity, order)


class NodeScheduler:
    """Memoized per-node scheduling: exact up to ``exact_limit`` tasks."""

    def __init__(self, exact_limit: int = EXACT_LIMIT):
        self.exact_limit = exact_limit
        self._cache: dict = {}

    def is_exact(self, n_items: int) -> bool:
        return n_items <= self.exact_limit

    def makespan(self, items: Sequence[Item], capacity: int) -> float:
        return self.schedule(items, capacity)[0]

    def schedule(self, items: Sequence[Item], capacity: int) -> tuple[float, list[float]]:
        order = sorted(range(len(items)), key=lambda k: (items[k], k))
        key = (capacity, tuple(items[k] for k in order))
        hit = self._cache.get(key)
        if hit is None:
            canon = list(key[1])
            if len(canon) <= self.exact_limit:
                hit = exact_schedule(canon, capacity)
            else:
                hit = heuristic_schedule(canon, capacity)
            if len(self._cache) > 200_000:
                self._cache.clear()
            self._cache[key] = hit
        ms, canon_starts = hit
        starts = [0.0] * len(items)
        for pos, k in enumerate(order):
            starts[k] = canon_starts[pos]
        return ms, starts

