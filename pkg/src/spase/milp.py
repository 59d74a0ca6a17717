"""The SPASE mixed-integer program: construction, checking, LP export.

Variables (task i, config s, node n, GPU g):

* ``B_i_s``  binary, task i runs configuration s
* ``O_i_n``  binary, task i runs on node n
* ``P_i_n_g`` binary, task i holds GPU g of node n
* ``A_i_j``  binary, task i runs before task j
* ``I_i_n_g`` continuous >= 0, start time of task i on GPU g of node n
* ``C``      continuous >= 0, makespan (the objective)

Conditional constraints are switched off through a big-M constant ``U``.
Runtimes are effective runtimes (remaining work plus pending overhead), so
the same builder serves residual workloads.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ConversionError, InvalidInputError, ParseError, UnschedulableTaskError
from .sim import Placement, Plan
from .workload import Cluster, Task, check_schedulable, check_unique_ids

TOL = 1e-6

TAGS = (
    "makespan", "one-config", "one-node", "alloc-lo", "alloc-hi", "unselected-zero",
    "gang-lo", "gang-hi", "isolation-before", "isolation-after",
)


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # "binary" | "continuous"
    lower: float = 0.0
    upper: float = math.inf


@dataclass(frozen=True)
class Constraint:
    terms: tuple[tuple[float, str], ...]
    sense: str  # "<=" | ">=" | "="
    rhs: float
    tag: str

    def lhs(self, x: Mapping[str, float]) -> float:
        return sum(c * x[v] for c, v in self.terms)

    def violated(self, x: Mapping[str, float], tol: float = TOL) -> bool:
        v = self.lhs(x)
        if self.sense == "<=":
            return v > self.rhs + tol
        if self.sense == ">=":
            return v < self.rhs - tol
        return abs(v - self.rhs) > tol


@dataclass(frozen=True)
class MilpModel:
    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]
    objective: str
    big_m: float
    task_ids: tuple[str, ...]
    node_ids: tuple[str, ...]
    B: Mapping[tuple[int, int], str] = field(repr=False)
    O: Mapping[tuple[int, int], str] = field(repr=False)
    P: Mapping[tuple[int, int, int], str] = field(repr=False)
    A: Mapping[tuple[int, int], str] = field(repr=False)
    I: Mapping[tuple[int, int, int], str] = field(repr=False)

    def counts_by_tag(self) -> dict[str, int]:
        out = dict.fromkeys(TAGS, 0)
        for c in self.constraints:
            out[c.tag] += 1
        return out


@dataclass(frozen=True)
class MilpSolution:
    assignment: Mapping[str, float]

    @property
    def objective_value(self) -> float:
        return self.assignment["C"]


def horizon(tasks: Sequence[Task]) -> float:
    """Serial execution time of every task in its slowest configuration."""
    return sum(max(t.effective_runtime(s) for s in range(len(t.configs))) for t in tasks)


def big_m(tasks: Sequence[Task], cluster: Cluster) -> float:
    """``(max GPU_n + 1) * (H + 1)`` with ``H`` the serial worst-case horizon.

    Large enough that every switched-off constraint stays slack for start
    times and makespans up to ``H``; the gang rows need the GPU-count
    factor because their averaged start sums up to ``GPU_n`` start times.
    """
    if not tasks:
        raise InvalidInputError("big_m needs at least one task")
    return float((cluster.max_gpus + 1) * (horizon(tasks) + 1.0))


def _names(tasks: Sequence[Task], cluster: Cluster):
    B = {(i, s): f"B_{i}_{s}" for i, t in enumerate(tasks) for s in range(len(t.configs))}
    O = {(i, n): f"O_{i}_{n}" for i in range(len(tasks)) for n in range(len(cluster.nodes))}
    P = {(i, n, g): f"P_{i}_{n}_{g}" for i in range(len(tasks))
         for n, node in enumerate(cluster.nodes) for g in range(node.gpu_count)}
    A = {(i, j): f"A_{i}_{j}" for i in range(len(tasks)) for j in range(len(tasks)) if i != j}
    I = {(i, n, g): f"I_{i}_{n}_{g}" for i in range(len(tasks))
         for n, node in enumerate(cluster.nodes) for g in range(node.gpu_count)}
    return B, O, P, A, I


def _row(pairs, sense, rhs, tag) -> Constraint:
    merged: dict[str, float] = {}
    for c, v in pairs:
        merged[v] = merged.get(v, 0.0) + c
    return Constraint(tuple((c, v) for v, c in merged.items() if c != 0.0), sense, float(rhs), tag)


def build_milp(tasks: Sequence[Task], cluster: Cluster, U: float | None = None) -> MilpModel:
    check_unique_ids(tasks)
    check_schedulable(tasks, cluster)
    if U is None:
        U = big_m(tasks, cluster)
    B, O, P, A, I = _names(tasks, cluster)
    variables = [Variable(v, "binary", 0.0, 1.0) for names in (B, O, P, A) for v in names.values()]
    variables += [Variable(v, "continuous") for v in I.values()]
    variables.append(Variable("C", "continuous"))

    nodes = cluster.nodes
    T = range(len(tasks))
    R = [[t.effective_runtime(s) for s in range(len(t.configs))] for t in tasks]
    G = [[c.gpu_count for c in t.configs] for t in tasks]
    rows: list[Constraint] = []

    for i in T:
        for s in range(len(R[i])):
            for n, node in enumerate(nodes):
                for g in range(node.gpu_count):
                    rows.append(_row([(1, "C"), (-1, I[i, n, g]), (-U, B[i, s])], ">=", R[i][s] - U, "makespan"))
    for i in T:
        rows.append(_row([(1, B[i, s]) for s in range(len(R[i]))], "=", 1, "one-config"))
        rows.append(_row([(1, O[i, n]) for n in range(len(nodes))], "=", 1, "one-node"))
    for i in T:
        for s in range(len(R[i])):
            for n, node in enumerate(nodes):
                held = [(1, P[i, n, g]) for g in range(node.gpu_count)]
                rows.append(_row(held + [(-U, O[i, n]), (-U, B[i, s])], ">=", G[i][s] - 2 * U, "alloc-lo"))
                rows.append(_row(held + [(U, O[i, n]), (U, B[i, s])], "<=", G[i][s] + 2 * U, "alloc-hi"))
    for i in T:
        for n, node in enumerate(nodes):
            held = [(1, P[i, n, g]) for g in range(node.gpu_count)]
            rows.append(_row(held + [(-U, O[i, n])], "<=", 0, "unselected-zero"))
    for i in T:
        for s in range(len(R[i])):
            for n, node in enumerate(nodes):
                avg = [(1.0 / G[i][s], I[i, n, g]) for g in range(node.gpu_count)]
                for g in range(node.gpu_count):
                    ind = [(U, P[i, n, g]), (U, B[i, s]), (U, O[i, n])]
                    rows.append(_row(avg + [(-1, I[i, n, g])] + ind, "<=", 3 * U, "gang-lo"))
                    rows.append(_row(avg + [(-1, I[i, n, g])] + [(-c, v) for c, v in ind], ">=", -3 * U, "gang-hi"))
    for i in T:
        for j in T:
            if i == j:
                continue
            for n, node in enumerate(nodes):
                for g in range(node.gpu_count):
                    # i entirely before j on this GPU, selected by A_j_i == 0
                    for s in range(len(R[i])):
                        rows.append(_row(
                            [(1, I[i, n, g]), (-1, I[j, n, g]), (U, P[i, n, g]), (U, P[j, n, g]),
                             (U, B[i, s]), (-U, A[j, i])],
                            "<=", 3 * U - R[i][s], "isolation-before"))
                    # j entirely before i, selected by A_j_i == 1, with j's runtime
                    for s in range(len(R[j])):
                        rows.append(_row(
                            [(1, I[i, n, g]), (-1, I[j, n, g]), (-U, P[i, n, g]), (-U, P[j, n, g]),
                             (-U, A[j, i]), (-U, B[j, s])],
                            ">=", R[j][s] - 4 * U, "isolation-after"))

    return MilpModel(tuple(variables), tuple(rows), "C", float(U),
                     tuple(t.id for t in tasks), tuple(n.id for n in nodes), B, O, P, A, I)


def expected_counts(tasks: Sequence[Task], cluster: Cluster) -> dict[str, int]:
    """Closed-form variable and constraint counts of :func:`build_milp`."""
    nT, nN = len(tasks), len(cluster.nodes)
    sum_s = sum(len(t.configs) for t in tasks)
    gpus = cluster.total_gpus
    return {
        "B": sum_s, "O": nT * nN, "P": nT * gpus, "A": nT * (nT - 1), "I": nT * gpus, "C": 1,
        "makespan": sum_s * gpus, "one-config": nT, "one-node": nT,
        "alloc-lo": sum_s * nN, "alloc-hi": sum_s * nN, "unselected-zero": nT * nN,
        "gang-lo": sum_s * gpus, "gang-hi": sum_s * gpus,
        "isolation-before": sum_s * (nT - 1) * gpus, "isolation-after": sum_s * (nT - 1) * gpus,
    }


def check_solution(model: MilpModel, sol: MilpSolution, tol: float = TOL) -> list[str]:
    """Sorted tags of every violated constraint family.

    Besides the constraint tags, ``bounds`` flags variables outside their
    bounds and ``integrality`` flags non-0/1 binaries.
    """
    x = sol.assignment
    missing = [v.name for v in model.variables if v.name not in x]
    if missing:
        raise InvalidInputError(f"solution lacks {len(missing)} variable(s), e.g. {missing[:3]}")
    bad = set()
    for v in model.variables:
        val = x[v.name]
        if not math.isfinite(val) or val < v.lower - tol or val > v.upper + tol:
            bad.add("bounds")
        if v.kind == "binary" and min(abs(val), abs(val - 1.0)) > tol:
            bad.add("integrality")
    for c in model.constraints:
        if c.tag not in bad and c.violated(x, tol):
            bad.add(c.tag)
    return sorted(bad)


def violated_constraints(model: MilpModel, sol: MilpSolution, tol: float = TOL) -> list[Constraint]:
    return [c for c in model.constraints if c.violated(sol.assignment, tol)]


def plan_to_assignment(plan: Plan, tasks: Sequence[Task], cluster: Cluster) -> MilpSolution:
    """The 0/1/continuous assignment a plan induces (unused GPUs start at 0)."""
    by_id = check_unique_ids(tasks)
    B, O, P, A, I = _names(tasks, cluster)
    x = dict.fromkeys(list(B.values()) + list(O.values()) + list(P.values()) + list(A.values())
                      + list(I.values()), 0.0)
    index = {t.id: i for i, t in enumerate(tasks)}
    for tid in plan.placements:
        if tid not in by_id:
            raise InvalidInputError(f"plan references unknown task {tid!r}")
    makespan = 0.0
    order_key = {}
    for tid, p in plan.items():
        i = index[tid]
        task = by_id[tid]
        n = cluster.node_index(p.node)
        cap = cluster.nodes[n].gpu_count
        order_key[i] = (p.start_s, i)
        if 0 <= p.config < len(task.configs):
            x[B[i, p.config]] = 1.0
            r = task.effective_runtime(p.config)
        else:
            r = 0.0
        x[O[i, n]] = 1.0
        for k, g in enumerate(p.gpus):
            if 0 <= g < cap:
                x[P[i, n, g]] = 1.0
                x[I[i, n, g]] = p.start_on(k)
                makespan = max(makespan, p.start_on(k) + r)
        for node_id, g in p.blocked:
            m = cluster.node_index(node_id)
            if 0 <= g < cluster.nodes[m].gpu_count and x[P[i, m, g]] == 0.0:
                x[P[i, m, g]] = 1.0
                x[I[i, m, g]] = p.start_s
                makespan = max(makespan, p.start_s + r)
    for (i, j), name in A.items():
        ki = order_key.get(i, (math.inf, i))
        kj = order_key.get(j, (math.inf, j))
        x[name] = 1.0 if ki < kj else 0.0
    x["C"] = makespan
    return MilpSolution(x)


def solution_to_plan(sol: MilpSolution, tasks: Sequence[Task], cluster: Cluster, tol: float = TOL) -> Plan:
    B, O, P, A, I = _names(tasks, cluster)
    x = sol.assignment
    for names in (B, O, P, A):
        for name in names.values():
            if name not in x:
                raise InvalidInputError(f"solution lacks variable {name}")
            if min(abs(x[name]), abs(x[name] - 1.0)) > tol:
                raise ConversionError(f"{name} = {x[name]} is not binary")
    placements = {}
    for i, task in enumerate(tasks):
        chosen = [s for s in range(len(task.configs)) if x[B[i, s]] > 0.5]
        nodes = [n for n in range(len(cluster.nodes)) if x[O[i, n]] > 0.5]
        if len(chosen) != 1 or len(nodes) != 1:
            raise ConversionError(f"task {task.id!r} does not select exactly one configuration and node")
        s, n = chosen[0], nodes[0]
        gpus = tuple(g for g in range(cluster.nodes[n].gpu_count) if x[P[i, n, g]] > 0.5)
        if not gpus:
            raise ConversionError(f"task {task.id!r} holds no GPU on its node")
        starts = [x[I[i, n, g]] for g in gpus]
        if max(starts) - min(starts) > tol:
            raise ConversionError(f"task {task.id!r} has misaligned gang start times")
        placements[task.id] = Placement(cluster.nodes[n].id, gpus, s, min(starts))
    return Plan(placements)


def _num(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _expr(terms) -> str:
    parts = []
    for k, (c, v) in enumerate(terms):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        body = v if mag == 1 else f"{_num(mag)} {v}"
        if k == 0:
            parts.append(f"- {body}" if sign == "-" else body)
        else:
            parts.append(f"{sign} {body}")
    lines, cur = [], []
    for p in parts:
        cur.append(p)
        if len(cur) == 8:
            lines.append(" ".join(cur))
            cur = []
    if cur:
        lines.append(" ".join(cur))
    return "\n   ".join(lines) if lines else "0 C"


def export_lp(model: MilpModel) -> str:
    """The model in CPLEX LP text format; output depends only on the model."""
    out = io.StringIO()
    out.write(f"\\ SPASE makespan model: tasks {len(model.task_ids)}, nodes {len(model.node_ids)}, U {_num(model.big_m)}\n")
    out.write("Minimize\n")
    out.write(f" {model.objective}\n")
    out.write("Subject To\n")
    counters: dict[str, int] = {}
    for c in model.constraints:
        k = counters.get(c.tag, 0)
        counters[c.tag] = k + 1
        out.write(f" {c.tag.replace('-', '_')}_{k}: {_expr(c.terms)} {c.sense} {_num(c.rhs)}\n")
    out.write("Bounds\n")
    for v in model.variables:
        if v.kind == "continuous":
            if math.isinf(v.upper):
                out.write(f" {v.name} >= {_num(v.lower)}\n")
            else:
                out.write(f" {_num(v.lower)} <= {v.name} <= {_num(v.upper)}\n")
    out.write("Binary\n")
    for v in model.variables:
        if v.kind == "binary":
            out.write(f" {v.name}\n")
    out.write("End\n")
    return out.getvalue()


def parse_solution_text(text: str) -> MilpSolution:
    """Read ``name value`` lines; blank lines and ``#`` comments are skipped."""
    x = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"line {lineno}", f"expected 'name value', got {raw!r}")
        name, value = parts
        if name in x:
            raise ParseError(f"line {lineno}", f"duplicate variable {name}")
        try:
            x[name] = float(value)
        except ValueError:
            raise ParseError(f"line {lineno}", f"value {value!r} is not a number") from None
    return MilpSolution(x)


def format_solution_text(model: MilpModel, sol: MilpSolution) -> str:
    lines = [f"# objective {_num(sol.objective_value)}"]
    for v in model.variables:
        lines.append(f"{v.name} {_num(sol.assignment[v.name])}")
    return "\n".join(lines) + "\n"
