"""Test oracles that share no code with the solver.

``milp_optimum`` hands the model built by :mod:`spase.milp` to HiGHS through
``scipy.optimize.milp``; agreement with the package's brute force checks the
formulation and the search against each other.

HiGHS works to a feasibility tolerance of about 1e-6, which big-M rows
amplify, so only its integer decisions are kept. With the binaries fixed,
what remains are difference constraints between start times, and
``exact_times`` solves them by a longest-path pass in the order given by A.
"""

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp
from scipy.sparse import lil_matrix

from spase.milp import MilpSolution


def milp_optimum(model, time_limit=60.0):
    names = [v.name for v in model.variables]
    col = {n: k for k, n in enumerate(names)}
    A = lil_matrix((len(model.constraints), len(names)))
    lo = np.full(len(model.constraints), -np.inf)
    hi = np.full(len(model.constraints), np.inf)
    for r, c in enumerate(model.constraints):
        for coef, v in c.terms:
            A[r, col[v]] += coef
        if c.sense in ("<=", "="):
            hi[r] = c.rhs
        if c.sense in (">=", "="):
            lo[r] = c.rhs
    cost = np.zeros(len(names))
    cost[col[model.objective]] = 1.0
    integrality = np.array([1 if v.kind == "binary" else 0 for v in model.variables])
    bounds = Bounds([v.lower for v in model.variables], [v.upper for v in model.variables])
    res = milp(cost, constraints=LinearConstraint(A.tocsr(), lo, hi), integrality=integrality, bounds=bounds,
               options={"time_limit": time_limit, "mip_rel_gap": 0.0})
    if res.x is None:
        return None, None
    x = {n: float(res.x[k]) for k, n in enumerate(names)}
    for v in model.variables:
        if v.kind == "binary":
            x[v.name] = float(round(x[v.name]))
    return res.fun, MilpSolution(x)


def exact_times(model, sol, tasks, cluster):
    """Earliest start times and makespan implied by the binaries of ``sol``."""
    x = sol.assignment
    n_t = len(tasks)
    chosen = {}
    for i, t in enumerate(tasks):
        s = next(s for s in range(len(t.configs)) if x[model.B[i, s]] > 0.5)
        n = next(n for n in range(len(cluster.nodes)) if x[model.O[i, n]] > 0.5)
        gpus = {g for g in range(cluster.nodes[n].gpu_count) if x[model.P[i, n, g]] > 0.5}
        chosen[i] = (s, n, gpus, t.effective_runtime(s))
    # A_i_j = 1 means i runs before j wherever they share a GPU
    preds = {j: [i for i in range(n_t) if i != j and x[model.A[i, j]] > 0.5
                 and chosen[i][1] == chosen[j][1] and chosen[i][2] & chosen[j][2]] for j in range(n_t)}
    start = {}

    def visit(j, stack=()):
        if j in start:
            return start[j]
        assert j not in stack, "cyclic order"
        start[j] = max((visit(i, stack + (j,)) + chosen[i][3] for i in preds[j]), default=0.0)
        return start[j]

    for j in range(n_t):
        visit(j)
    makespan = max(start[j] + chosen[j][3] for j in range(n_t))
    return start, makespan
