"""Synthetic convex decomposed problems with analytic value functions.

Each instance couples a small random binary program with one scalar
continuous variable per subproblem.  Subproblem s has the closed-form
value function S_s(t) = a (t - b)^2 + c (a > 0, c >= 0), so cuts,
bounds, and the optimum can all be checked exactly; the monolithic
optimum comes from enumerating every binary assignment.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..engine import (
    CutPool,
    DecodedMaster,
    DecomposedProblem,
    MasterArtifacts,
    SubproblemResult,
    add_cut,
)
from ..milp import MilpModel, ModelBuilder, Sense


@dataclass
class Quadratic:
    a: float
    b: float
    c: float

    def value(self, t: float) -> float:
        return self.a * (t - self.b) ** 2 + self.c

    def slope(self, t: float) -> float:
        return 2.0 * self.a * (t - self.b)


@dataclass
class ConvexFamilyProblem(DecomposedProblem):
    """Master over binaries y plus one continuous time t_s per subproblem.

    minimize  c_y' y + sum_s S_s(t_s)
    s.t.      W y <= w          (random knapsack rows)
              t_s >= l_s + g_s' y,  0 <= t_s <= t_hi

    The subproblem block enters the master through eta_s >= cuts.
    """

    dim: int
    quads: list[Quadratic]
    c_y: np.ndarray
    rows_w: np.ndarray      # (m, dim) knapsack weights
    rows_rhs: np.ndarray
    link_l: np.ndarray      # (n_sub,)
    link_g: np.ndarray      # (n_sub, dim)
    t_hi: float = 8.0
    instance_id: str = "convex"
    feature_vec: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_sub(self) -> int:
        return len(self.quads)

    def eta_upper(self, s: int) -> float:
        q = self.quads[s]
        return q.value(0.0) if q.b > self.t_hi / 2 else q.value(self.t_hi)

    def features(self) -> np.ndarray:
        return self.feature_vec

    def build_master(self, cuts: CutPool) -> MasterArtifacts:
        b = ModelBuilder()
        y_cols = [b.add_var(obj=float(self.c_y[j]), binary=True) for j in range(self.dim)]
        t_cols = [b.add_var(lb=0.0, ub=self.t_hi) for _ in range(self.n_sub)]
        eta_cols = [b.add_var(lb=0.0, ub=self.eta_upper(s), obj=1.0)
                    for s in range(self.n_sub)]
        for i in range(len(self.rows_rhs)):
            coefs = {y_cols[j]: float(self.rows_w[i, j])
                     for j in range(self.dim) if self.rows_w[i, j] != 0.0}
            b.add_row(coefs, Sense.LE, float(self.rows_rhs[i]))
        for s in range(self.n_sub):
            coefs = {t_cols[s]: 1.0}
            for j in range(self.dim):
                if self.link_g[s, j] != 0.0:
                    coefs[y_cols[j]] = -float(self.link_g[s, j])
            b.add_row(coefs, Sense.GE, float(self.link_l[s]))
        model = b.build_milp()
        for cut in cuts:
            s = cut.subproblem_id
            model = add_cut(model, cut, eta_col=eta_cols[s],
                            y_cols=np.array([t_cols[s]]))

        def decode(x: np.ndarray) -> DecodedMaster:
            f1 = float(sum(self.c_y[j] * x[y_cols[j]] for j in range(self.dim)))
            points = [(s, np.array([x[t_cols[s]]])) for s in range(self.n_sub)]
            return DecodedMaster(fixed_objective=f1, points=points)

        return MasterArtifacts(model=model, decode=decode)

    def solve_subproblem(self, sub_id, point: np.ndarray) -> SubproblemResult:
        t = float(np.atleast_1d(point)[0])
        q = self.quads[sub_id]
        return SubproblemResult(value=q.value(t), slope=np.array([q.slope(t)]))


def build_convex_family(dim: int, seed: int, n_sub: int = 2) -> ConvexFamilyProblem:
    """Seeded random instance; binaries stay enumerable (dim <= 12).

    The binary block is a correlated knapsack (item profits track weights),
    which gives the master a genuine integrality gap so that the inexact
    gap tolerance actually changes the branch-and-bound effort.
    """
    if dim > 12:
        raise ValueError("convex family instances are capped at 12 binaries")
    rng = np.random.default_rng(seed)
    t_hi = 8.0
    quads = [Quadratic(a=float(rng.uniform(0.5, 2.0)),
                       b=float(rng.uniform(1.0, t_hi - 1.0)),
                       c=float(rng.uniform(0.5, 3.0))) for _ in range(n_sub)]
    if dim:
        w = rng.uniform(1.0, 10.0, size=dim)
        c_y = -(w + rng.uniform(0.5, 2.0, size=dim))
        rows_w = w[None, :].copy()
        rows_rhs = np.array([np.floor(0.5 * w.sum()) + 0.4])
    else:
        c_y = np.zeros(0)
        rows_w = np.zeros((0, 0))
        rows_rhs = np.zeros(0)
    link_l = rng.uniform(0.0, 1.0, size=n_sub)
    link_g = np.zeros((n_sub, dim))
    for s in range(n_sub):
        if dim:
            picks = rng.choice(dim, size=max(1, dim // 3), replace=False)
            link_g[s, picks] = rng.uniform(0.0, 0.6, size=len(picks))
    feats = []
    for q, l in zip(quads, link_l):
        feats.extend([(q.a - 0.5) / 1.5, q.b / t_hi, (q.c - 0.5) / 2.5, l])
    feats.append(float(np.mean(c_y)) / 12.0 if dim else 0.0)
    feats.append(float(np.std(c_y)) / 12.0 if dim else 0.0)
    return ConvexFamilyProblem(
        dim=dim, quads=quads, c_y=c_y, rows_w=rows_w, rows_rhs=rows_rhs,
        link_l=link_l, link_g=link_g, t_hi=t_hi,
        instance_id=f"convex-d{dim}-n{n_sub}-s{seed}",
        feature_vec=np.asarray(feats),
    )


def toy_quadratic(a: float = 1.0, b: float = 2.0, c: float = 1.0,
                  t_hi: float = 4.0) -> ConvexFamilyProblem:
    """Single-subproblem instance with no binaries: min S(t) over [0, t_hi]."""
    return ConvexFamilyProblem(
        dim=0, quads=[Quadratic(a, b, c)], c_y=np.zeros(0),
        rows_w=np.zeros((0, 0)), rows_rhs=np.zeros(0),
        link_l=np.zeros(1), link_g=np.zeros((1, 0)), t_hi=t_hi,
        instance_id="convex-toy",
        feature_vec=np.array([a, b / t_hi, c, 0.0, 0.0, 0.0]),
    )


def enumerate_convex_optimum(problem: ConvexFamilyProblem):
    """Brute-force oracle: every binary assignment, analytic best times."""
    best_v = float("inf")
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=problem.dim):
        y = np.array(bits)
        if problem.dim and np.any(problem.rows_w @ y > problem.rows_rhs + 1e-9):
            continue
        v = float(problem.c_y @ y) if problem.dim else 0.0
        ts = []
        for s, q in enumerate(problem.quads):
            lo = max(0.0, float(problem.link_l[s] + problem.link_g[s] @ y))
            t = min(max(q.b, lo), problem.t_hi)
            ts.append(t)
            v += q.value(t)
        if v < best_v:
            best_v = v
            best = (y.copy(), np.array(ts))
    return best_v, best
