import itertools

import numpy as np
import pytest

from igbd.milp import LinearProgram, MilpModel, ModelBuilder, Sense


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_lp(rng, n_vars=8, n_rows=6) -> LinearProgram:
    """Random bounded-feasible LP: box [0, 3]^n plus <= rows through a point."""
    b = ModelBuilder()
    for _ in range(n_vars):
        b.add_var(lb=0.0, ub=3.0, obj=float(rng.normal()))
    x0 = rng.uniform(0.5, 2.5, size=n_vars)
    for _ in range(n_rows):
        coefs = {j: float(rng.normal()) for j in rng.choice(n_vars, size=4, replace=False)}
        slack = float(rng.uniform(0.1, 1.0))
        rhs = sum(v * x0[j] for j, v in coefs.items()) + slack
        b.add_row(coefs, Sense.LE, rhs)
    return b.build_lp()


def random_binary_milp(rng, n_bin=6, n_rows=4) -> MilpModel:
    """Random knapsack-style binary MILP, feasible at the origin."""
    b = ModelBuilder()
    for _ in range(n_bin):
        b.add_var(obj=float(rng.uniform(-4.0, 1.0)), binary=True)
    for _ in range(n_rows):
        coefs = {j: float(rng.uniform(0.0, 2.0)) for j in rng.choice(n_bin, size=3, replace=False)}
        rhs = float(rng.uniform(1.0, 3.5))
        b.add_row(coefs, Sense.LE, rhs)
    return b.build_milp()


def enumerate_binary_optimum(model: MilpModel):
    """Brute-force MILP oracle: try every 0/1 assignment of the binaries.

    Only supports models whose variables are all binary.
    """
    lp = model.lp
    n = lp.num_vars
    assert model.integrality.all()
    A = lp.matrix().toarray()
    best_v, best_x = float("inf"), None
    for bits in itertools.product((0.0, 1.0), repeat=n):
        x = np.array(bits)
        ax = A @ x
        ok = True
        for i, s in enumerate(lp.senses):
            if s == Sense.LE and ax[i] > lp.rhs[i] + 1e-9:
                ok = False
            elif s == Sense.GE and ax[i] < lp.rhs[i] - 1e-9:
                ok = False
            elif s == Sense.EQ and abs(ax[i] - lp.rhs[i]) > 1e-9:
                ok = False
        if ok:
            v = float(lp.objective @ x)
            if v < best_v:
                best_v, best_x = v, x
    return best_v, best_x


def enumerate_vertices_optimum(lp: LinearProgram):
    """LP oracle: enumerate basic feasible points from all n-subsets of the
    stacked constraint set (rows treated as equalities plus variable bounds)
    and return the best feasible objective."""
    n = lp.num_vars
    A = lp.matrix().toarray()
    m = A.shape[0]
    # stacked system: each row a'x = rhs candidate, plus x_j = lb_j or ub_j
    cand_rows = []
    cand_rhs = []
    for i in range(m):
        cand_rows.append(A[i])
        cand_rhs.append(lp.rhs[i])
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lp.lb[j]):
            cand_rows.append(e.copy())
            cand_rhs.append(lp.lb[j])
        if np.isfinite(lp.ub[j]):
            cand_rows.append(e.copy())
            cand_rhs.append(lp.ub[j])
    cand_rows = np.array(cand_rows)
    cand_rhs = np.array(cand_rhs)
    best = float("inf")
    best_x = None
    for subset in itertools.combinations(range(len(cand_rhs)), n):
        M = cand_rows[list(subset)]
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, cand_rhs[list(subset)])
        if np.any(x < lp.lb - 1e-8) or np.any(x > lp.ub + 1e-8):
            continue
        ax = A @ x
        ok = True
        for i, s in enumerate(lp.senses):
            if s == Sense.LE and ax[i] > lp.rhs[i] + 1e-8:
                ok = False
            elif s == Sense.GE and ax[i] < lp.rhs[i] - 1e-8:
                ok = False
            elif s == Sense.EQ and abs(ax[i] - lp.rhs[i]) > 1e-8:
                ok = False
        if ok:
            v = float(lp.objective @ x)
            if v < best:
                best, best_x = v, x
    return best, best_x
