"""Simulation studies: solver-versus-baseline comparison and timeout sweeps."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from scipy import stats

from .baselines import BASELINES
from .errors import InvalidInputError, UnschedulableTaskError
from .sim import plan_makespan
from .solver import INFEASIBLE, solve
from .workload import Cluster, Task

APPROACHES = ("solver", "max", "min", "random", "optimus")
DEFAULT_LADDER = (1.0, 5.0, 15.0, 60.0, 300.0)


@dataclass(frozen=True)
class Summary:
    mean: float
    ci_low: float
    ci_high: float
    n: int

    @property
    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2


def summarize(values: Sequence[float], confidence: float = 0.90) -> Summary:
    """Mean with a two-sided t-distribution confidence interval."""
    n = len(values)
    if n == 0:
        raise InvalidInputError("no values to summarize")
    mean = sum(values) / n
    if n == 1:
        return Summary(mean, mean, mean, 1)
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    half = stats.t.ppf(0.5 + confidence / 2, n - 1) * math.sqrt(var / n) if var > 0 else 0.0
    return Summary(mean, mean - half, mean + half, n)


def percent_reduction(ours: float, theirs: float) -> float:
    return 100.0 * (theirs - ours) / theirs if theirs > 0 else 0.0


def geometric_mean(values: Sequence[float]) -> float:
    if not values or any(v <= 0 for v in values):
        raise InvalidInputError("geometric mean needs positive values")
    return math.exp(sum(math.log(v) for v in values) / len(values))


def geometric_mean_reduction(ours: Sequence[float], theirs: Sequence[float]) -> float:
    """Percent reduction implied by the geometric mean of per-instance ratios."""
    return 100.0 * (1.0 - geometric_mean([a / b for a, b in zip(ours, theirs)]))


@dataclass(frozen=True)
class Comparison:
    seeds: tuple[int, ...]
    makespans: Mapping[str, tuple[float, ...]]
    skipped: Mapping[str, str] = field(default_factory=dict)  # baseline -> why it cannot run

    def summary(self, approach: str) -> Summary:
        return summarize(self.makespans[approach])

    def reduction_vs(self, baseline: str) -> float:
        return percent_reduction(self.summary("solver").mean, self.summary(baseline).mean)

    def format(self, fmt: str = "text") -> str:
        buf = io.StringIO()
        if fmt == "csv":
            buf.write("approach,mean_s,ci90_low_s,ci90_high_s,reduction_pct\n")
        else:
            buf.write(f"{'approach':<10}{'mean_s':>14}{'ci90_low_s':>14}{'ci90_high_s':>14}{'solver_gain_%':>15}\n")
        for a in self.makespans:
            s = self.summary(a)
            red = "" if a == "solver" else f"{self.reduction_vs(a):.2f}"
            if fmt == "csv":
                buf.write(f"{a},{s.mean:.6f},{s.ci_low:.6f},{s.ci_high:.6f},{red}\n")
            else:
                buf.write(f"{a:<10}{s.mean:>14.3f}{s.ci_low:>14.3f}{s.ci_high:>14.3f}{red:>15}\n")
        for a, why in self.skipped.items():
            buf.write(f"{a},,,,\n" if fmt == "csv" else f"{a:<10}  n/a: {why}\n")
        return buf.getvalue()


def compare(tasks: Sequence[Task], cluster: Cluster, seeds: Sequence[int], timeout_s: float = 300.0) -> Comparison:
    """Solver and every baseline on one workload, once per seed.

    A baseline whose preconditions the workload does not meet (for example
    Min without a 1-GPU configuration) is listed in ``skipped``.
    """
    if not seeds:
        raise InvalidInputError("compare needs at least one seed")
    out: dict[str, list[float]] = {a: [] for a in APPROACHES}
    skipped: dict[str, str] = {}
    for seed in seeds:
        outcome = solve(tasks, cluster, timeout_s, seed)
        if outcome.status == INFEASIBLE:
            raise UnschedulableTaskError(outcome.unschedulable)
        out["solver"].append(outcome.makespan)
        for name in APPROACHES[1:]:
            if name in skipped:
                continue
            try:
                out[name].append(plan_makespan(BASELINES[name](tasks, cluster, seed), tasks))
            except (InvalidInputError, UnschedulableTaskError) as err:
                skipped[name] = str(err)
    return Comparison(tuple(seeds), {a: tuple(v) for a, v in out.items() if a not in skipped}, skipped)


def scaled_ladder(tasks: Sequence[Task], ladder: Sequence[float] = DEFAULT_LADDER) -> list[float]:
    """Timeouts shrunk for small instances: 96 configuration choices keep the full ladder."""
    factor = min(1.0, sum(len(t.configs) for t in tasks) / 96.0)
    return [max(0.01, x * factor) for x in ladder]


def sweep_timeout(tasks: Sequence[Task], cluster: Cluster, ladder: Sequence[float] | None = None,
                  seed: int = 0) -> list[tuple[float, float]]:
    """(timeout, makespan) rows for increasing timeouts.

    Every rung is warm-started with the previous rung's plan, so the reported
    makespans never increase even when wall-clock noise varies the search.
    """
    ladder = sorted(scaled_ladder(tasks) if ladder is None else ladder)
    rows, plan = [], None
    for t in ladder:
        outcome = solve(tasks, cluster, t, seed, warm_start=plan)
        if not outcome.feasible:
            raise InvalidInputError(outcome.message)
        plan = outcome.plan
        rows.append((t, outcome.makespan))
    return rows
