"""Sparse LP/MILP containers and an anytime branch-and-bound solver.

The LP relaxations are solved with HiGHS (dual simplex, single-threaded,
deterministic) through ``scipy.optimize.linprog``.  Branch and bound is
implemented here directly so that the gap-based early termination, the
node/pivot work counters, and the anytime bound history stay under our
control: no presolve, no internal cutting planes, no primal heuristics.

Conventions (minimization throughout):
  * a solution carries an incumbent value ``v`` and a valid dual bound ``b``
    with ``b <= v``;
  * the relative gap is ``(v - b) / max(|v|, 1e-10)``, which coincides with
    the usual ``v * (1 - gap) = b`` identity whenever ``v > 0`` but stays
    sign-safe for negative objectives.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from heapq import heappush, heappop

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

GAP_DENOM_FLOOR = 1e-10
INTEGRALITY_TOL = 1e-6
LP_FEAS_TOL = 1e-8

_HIGHS_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


class Sense(str, Enum):
    LE = "<="
    EQ = "="
    GE = ">="


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"


class MilpStatus(Enum):
    OPTIMAL = "optimal"
    GAP_REACHED = "gap_reached"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    LIMIT_HIT = "limit_hit"


class BranchingRule(str, Enum):
    MOST_FRACTIONAL = "most_fractional"


class ModelError(ValueError):
    """Malformed model at construction time."""


@dataclass(frozen=True)
class LinearProgram:
    """min c'x  s.t.  A x (<=,=,>=) rhs,  lb <= x <= ub.

    Rows are stored in triplet form (row, col, val); senses are per row.
    """

    num_vars: int
    objective: np.ndarray
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    senses: tuple[Sense, ...]
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        n = self.num_vars
        if len(self.objective) != n:
            raise ModelError("objective length must equal num_vars")
        if len(self.lb) != n or len(self.ub) != n:
            raise ModelError("bound arrays must have length num_vars")
        if np.any(self.lb > self.ub + 1e-12):
            raise ModelError("lb > ub for some variable")
        if len(self.senses) != len(self.rhs):
            raise ModelError("one sense per row required")
        if self.col_idx.size and (self.col_idx.min() < 0 or self.col_idx.max() >= n):
            raise ModelError("constraint references invalid variable index")
        if self.row_idx.size and (self.row_idx.min() < 0 or self.row_idx.max() >= len(self.rhs)):
            raise ModelError("triplet references invalid row index")

    @property
    def num_rows(self) -> int:
        return len(self.rhs)

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, (self.row_idx, self.col_idx)),
            shape=(self.num_rows, self.num_vars),
        )

    def with_rows(self, rows: list[tuple[dict[int, float], Sense, float]]) -> "LinearProgram":
        """Return a copy with extra rows appended (used for Benders cuts)."""
        if not rows:
            return self
        r_idx = [self.row_idx]
        c_idx = [self.col_idx]
        vals = [self.values]
        senses = list(self.senses)
        rhs = [self.rhs]
        base = self.num_rows
        for off, (coefs, sense, b) in enumerate(rows):
            cols = np.fromiter(coefs.keys(), dtype=np.int64, count=len(coefs))
            r_idx.append(np.full(len(coefs), base + off, dtype=np.int64))
            c_idx.append(cols)
            vals.append(np.fromiter(coefs.values(), dtype=np.float64, count=len(coefs)))
            senses.append(sense)
            rhs.append(np.array([b]))
        return LinearProgram(
            num_vars=self.num_vars,
            objective=self.objective,
            row_idx=np.concatenate(r_idx),
            col_idx=np.concatenate(c_idx),
            values=np.concatenate(vals),
            senses=tuple(senses),
            rhs=np.concatenate(rhs),
            lb=self.lb,
            ub=self.ub,
        )


@dataclass(frozen=True)
class MilpModel:
    lp: LinearProgram
    integrality: np.ndarray  # boolean mask, len num_vars
    integer_kind: tuple[str, ...] = ()  # "binary" | "integer" per masked variable

    def __post_init__(self):
        if len(self.integrality) != self.lp.num_vars:
            raise ModelError("integrality mask length must equal num_vars")
        kinds = self.integer_kind
        n_int = int(np.count_nonzero(self.integrality))
        if kinds and len(kinds) != n_int:
            raise ModelError("integer_kind must have one entry per integer variable")
        if kinds:
            masked = np.flatnonzero(self.integrality)
            for k, j in zip(kinds, masked):
                if k == "binary" and (self.lp.lb[j] < -1e-12 or self.lp.ub[j] > 1 + 1e-12):
                    raise ModelError(f"binary variable {j} has bounds outside [0, 1]")

    @property
    def num_vars(self) -> int:
        return self.lp.num_vars


@dataclass(frozen=True)
class MilpSolveControl:
    gap_tolerance: float = 0.0
    node_limit: int | None = None
    work_limit: int | None = None
    branching_rule: BranchingRule = BranchingRule.MOST_FRACTIONAL
    seed: int = 0

    def __post_init__(self):
        if self.gap_tolerance < 0:
            raise ModelError("gap_tolerance must be nonnegative")


@dataclass
class LpSolution:
    status: LpStatus
    value: float
    x: np.ndarray | None
    duals: np.ndarray | None  # per-row marginal d(value)/d(rhs)
    pivots: int


@dataclass
class MilpSolution:
    status: MilpStatus
    incumbent_x: np.ndarray | None
    incumbent_value: float
    best_bound: float
    realized_gap: float
    nodes_explored: int
    simplex_pivots: int
    cpu_time: float
    # anytime history: (nodes_explored, incumbent_value, best_bound) snapshots
    bound_history: list[tuple[int, float, float]] = field(default_factory=list)

    def to_dict(self, include_cpu: bool = True) -> dict:
        d = {
            "status": self.status.value,
            "incumbent_x": None if self.incumbent_x is None else [float(v) for v in self.incumbent_x],
            "incumbent_value": self.incumbent_value,
            "best_bound": self.best_bound,
            "realized_gap": self.realized_gap,
            "nodes_explored": self.nodes_explored,
            "simplex_pivots": self.simplex_pivots,
            "bound_history": [[n, v, b] for (n, v, b) in self.bound_history],
        }
        if include_cpu:
            d["cpu_time"] = self.cpu_time
        return d


def relative_gap(v: float, b: float) -> float:
    """Relative optimality gap between incumbent v and dual bound b.

    Returns +inf when there is no finite incumbent.  Defined as
    (v - b)/max(|v|, 1e-10), clamped to [0, inf).
    """
    if v is None or not np.isfinite(v):
        return float("inf")
    if not np.isfinite(b):
        return float("inf")
    return max(0.0, (v - b) / max(abs(v), GAP_DENOM_FLOOR))


# ---------------------------------------------------------------------------
# LP solving (HiGHS backend)
# ---------------------------------------------------------------------------


def _split_rows(lp: LinearProgram):
    """Split triplet rows into (A_ub, b_ub, ub_row_signs, A_eq, b_eq, row_map).

    GE rows are negated into <= form; ``row_map`` lets us place the returned
    marginals back into original row order with the right sign.
    """
    senses = np.array([s.value for s in lp.senses])
    A = lp.matrix()
    le_mask = senses == Sense.LE.value
    ge_mask = senses == Sense.GE.value
    eq_mask = senses == Sense.EQ.value
    ub_rows = np.flatnonzero(le_mask | ge_mask)
    eq_rows = np.flatnonzero(eq_mask)
    sign = np.where(ge_mask[ub_rows], -1.0, 1.0)
    A_ub = A[ub_rows].multiply(sign[:, None]).tocsr() if ub_rows.size else None
    b_ub = lp.rhs[ub_rows] * sign if ub_rows.size else None
    A_eq = A[eq_rows] if eq_rows.size else None
    b_eq = lp.rhs[eq_rows] if eq_rows.size else None
    return A_ub, b_ub, sign, ub_rows, A_eq, b_eq, eq_rows


class _LpEngine:
    """Caches the row split of a fixed constraint matrix across bound changes.

    Branch and bound re-solves the same LP with tightened variable bounds at
    every node; splitting/negating the rows once saves most of the per-call
    conversion overhead.
    """

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        (self.A_ub, self.b_ub, self.sign, self.ub_rows,
         self.A_eq, self.b_eq, self.eq_rows) = _split_rows(lp)

    def solve(self, lb: np.ndarray, ub: np.ndarray) -> LpSolution:
        bounds = np.column_stack([lb, ub])
        res = linprog(
            self.lp.objective,
            A_ub=self.A_ub, b_ub=self.b_ub,
            A_eq=self.A_eq, b_eq=self.b_eq,
            bounds=bounds,
            method="highs-ds",
            options=_HIGHS_OPTIONS,
        )
        pivots = int(res.nit) if res.nit is not None else 0
        if res.status == 2:
            return LpSolution(LpStatus.INFEASIBLE, float("inf"), None, None, pivots)
        if res.status == 3:
            return LpSolution(LpStatus.UNBOUNDED, float("-inf"), None, None, pivots)
        if res.status != 0:
            return LpSolution(LpStatus.ERROR, float("nan"), None, None, pivots)
        duals = np.zeros(self.lp.num_rows)
        if self.ub_rows.size:
            duals[self.ub_rows] = res.ineqlin.marginals * self.sign
        if self.eq_rows.size:
            duals[self.eq_rows] = res.eqlin.marginals
        return LpSolution(LpStatus.OPTIMAL, float(res.fun), res.x, duals, pivots)


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve a linear program; returns value, primal point, per-row duals.

    Duals follow the marginal convention d(value)/d(rhs_i).
    """
    return _LpEngine(lp).solve(lp.lb, lp.ub)


# ---------------------------------------------------------------------------
# Branch and bound
# ---------------------------------------------------------------------------


def branch_and_bound(model: MilpModel, control: MilpSolveControl) -> MilpSolution:
    """Branch and bound with anytime relative-gap termination.

    Node selection is best-bound-first at the frontier, and every popped node
    starts a depth-first plunge (following the better child, parking the
    sibling on the frontier) so that integer incumbents appear early and
    the gap-based stop can actually fire.  Terminates as soon as
    relative_gap(v, b) <= control.gap_tolerance; the returned best_bound is
    a valid lower bound on the true MILP optimum no matter when the search
    stops.  Deterministic: most-fractional branching with lowest-index tie
    break, heap ties broken by insertion order.
    """
    t0 = time.process_time()
    engine = _LpEngine(model.lp)
    int_cols = np.flatnonzero(model.integrality)
    tol = control.gap_tolerance

    nodes = 0
    pivots = 0
    history: list[tuple[int, float, float]] = []
    incumbent_x: np.ndarray | None = None
    incumbent_v = float("inf")

    root = engine.solve(model.lp.lb, model.lp.ub)
    pivots += root.pivots
    nodes += 1
    if root.status == LpStatus.INFEASIBLE:
        return MilpSolution(MilpStatus.INFEASIBLE, None, float("inf"), float("inf"),
                            float("inf"), nodes, pivots, time.process_time() - t0, history)
    if root.status == LpStatus.UNBOUNDED:
        return MilpSolution(MilpStatus.UNBOUNDED, None, float("-inf"), float("-inf"),
                            float("inf"), nodes, pivots, time.process_time() - t0, history)

    best_bound = root.value
    # heap entries: (node_bound, insertion_counter, lb, ub, lp_solution)
    counter = 0
    heap: list = []
    heappush(heap, (root.value, counter, model.lp.lb.copy(), model.lp.ub.copy(), root))
    counter += 1

    def limits_hit() -> bool:
        if control.node_limit is not None and nodes >= control.node_limit:
            return True
        if control.work_limit is not None and pivots >= control.work_limit:
            return True
        return False

    status = None
    while heap and status is None:
        node_bound, _, lb, ub, sol = heappop(heap)
        best_bound = max(best_bound, min(node_bound, incumbent_v))
        history.append((nodes, incumbent_v, best_bound))
        if relative_gap(incumbent_v, best_bound) <= tol:
            status = MilpStatus.GAP_REACHED
            break
        # plunge: follow the better child until a leaf, parking siblings
        current: tuple | None = (lb, ub, sol)
        while current is not None and status is None:
            lb, ub, sol = current
            current = None
            if sol.value >= incumbent_v - 1e-9:
                break
            x = sol.x
            frac = (np.abs(x[int_cols] - np.round(x[int_cols]))
                    if int_cols.size else np.array([]))
            if frac.size == 0 or frac.max() <= INTEGRALITY_TOL:
                if sol.value < incumbent_v:
                    incumbent_v = sol.value
                    incumbent_x = x.copy()
                    history.append((nodes, incumbent_v, best_bound))
                    if relative_gap(incumbent_v, best_bound) <= tol:
                        status = MilpStatus.GAP_REACHED
                if status is None and limits_hit():
                    status = MilpStatus.LIMIT_HIT
                break
            # most-fractional branching, ties to the lowest variable index
            dist = np.minimum(frac, 1.0 - frac)
            j = int(int_cols[int(np.argmax(dist))])
            xv = x[j]
            lb_hi = lb.copy()
            lb_hi[j] = np.ceil(xv - INTEGRALITY_TOL)
            ub_lo = ub.copy()
            ub_lo[j] = np.floor(xv + INTEGRALITY_TOL)
            children = []
            for clb, cub in ((lb, ub_lo), (lb_hi, ub)):
                if clb[j] > cub[j] + 1e-12:
                    continue
                child = engine.solve(clb, cub)
                pivots += child.pivots
                nodes += 1
                if child.status == LpStatus.OPTIMAL and child.value < incumbent_v - 1e-9:
                    children.append((clb, cub, child))
            if limits_hit():
                status = MilpStatus.LIMIT_HIT
                break
            if not children:
                break
            # dive into the more promising child; park the other
            children.sort(key=lambda c: c[2].value)
            current = children[0]
            for clb, cub, child in children[1:]:
                heappush(heap, (child.value, counter, clb, cub, child))
                counter += 1

    if status is None:
        # frontier exhausted: search is complete
        if incumbent_x is None:
            return MilpSolution(MilpStatus.INFEASIBLE, None, float("inf"), float("inf"),
                                float("inf"), nodes, pivots, time.process_time() - t0, history)
        best_bound = incumbent_v
        status = MilpStatus.OPTIMAL
    elif status == MilpStatus.GAP_REACHED and relative_gap(incumbent_v, best_bound) <= 1e-12:
        status = MilpStatus.OPTIMAL
    history.append((nodes, incumbent_v, best_bound))
    gap = relative_gap(incumbent_v, best_bound)
    return MilpSolution(status, incumbent_x, incumbent_v, best_bound, gap,
                        nodes, pivots, time.process_time() - t0, history)


# ---------------------------------------------------------------------------
# Incremental model construction
# ---------------------------------------------------------------------------


class ModelBuilder:
    """Row/column accumulator for building LinearProgram/MilpModel objects."""

    def __init__(self):
        self._obj: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._integral: list[bool] = []
        self._kinds: list[str] = []
        self._rows: list[tuple[dict[int, float], Sense, float]] = []

    def add_var(self, lb: float = 0.0, ub: float = float("inf"),
                obj: float = 0.0, integer: bool = False, binary: bool = False) -> int:
        j = len(self._obj)
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        self._obj.append(obj)
        self._lb.append(lb)
        self._ub.append(ub)
        self._integral.append(integer or binary)
        if integer or binary:
            self._kinds.append("binary" if binary else "integer")
        return j

    def add_row(self, coefs: dict[int, float], sense: Sense, rhs: float) -> int:
        self._rows.append((dict(coefs), sense, float(rhs)))
        return len(self._rows) - 1

    @property
    def num_vars(self) -> int:
        return len(self._obj)

    def build_lp(self) -> LinearProgram:
        r_idx, c_idx, vals, senses, rhs = [], [], [], [], []
        for i, (coefs, sense, b) in enumerate(self._rows):
            for j, v in coefs.items():
                r_idx.append(i)
                c_idx.append(j)
                vals.append(v)
            senses.append(sense)
            rhs.append(b)
        return LinearProgram(
            num_vars=len(self._obj),
            objective=np.asarray(self._obj, dtype=float),
            row_idx=np.asarray(r_idx, dtype=np.int64),
            col_idx=np.asarray(c_idx, dtype=np.int64),
            values=np.asarray(vals, dtype=float),
            senses=tuple(senses),
            rhs=np.asarray(rhs, dtype=float),
            lb=np.asarray(self._lb, dtype=float),
            ub=np.asarray(self._ub, dtype=float),
        )

    def build_milp(self) -> MilpModel:
        return MilpModel(
            lp=self.build_lp(),
            integrality=np.asarray(self._integral, dtype=bool),
            integer_kind=tuple(self._kinds),
        )


# ---------------------------------------------------------------------------
# JSON serialization (schema "milp-v1")
# ---------------------------------------------------------------------------


def _enc(x: float) -> float | str:
    if x == float("inf"):
        return "inf"
    if x == float("-inf"):
        return "-inf"
    return float(x)


def _dec(x) -> float:
    if x == "inf":
        return float("inf")
    if x == "-inf":
        return float("-inf")
    return float(x)


def milp_to_dict(model: MilpModel) -> dict:
    lp = model.lp
    return {
        "schema": "milp-v1",
        "num_vars": lp.num_vars,
        "objective": [float(v) for v in lp.objective],
        "rows": [[int(r), int(c), float(v)]
                 for r, c, v in zip(lp.row_idx, lp.col_idx, lp.values)],
        "senses": [s.value for s in lp.senses],
        "rhs": [float(v) for v in lp.rhs],
        "lb": [_enc(v) for v in lp.lb],
        "ub": [_enc(v) for v in lp.ub],
        "integrality": [bool(v) for v in model.integrality],
        "integer_kind": list(model.integer_kind),
    }


def milp_from_dict(d: dict) -> MilpModel:
    if d.get("schema") != "milp-v1":
        raise ModelError(f"unsupported MILP schema: {d.get('schema')!r}")
    rows = d["rows"]
    lp = LinearProgram(
        num_vars=int(d["num_vars"]),
        objective=np.asarray(d["objective"], dtype=float),
        row_idx=np.asarray([r[0] for r in rows], dtype=np.int64),
        col_idx=np.asarray([r[1] for r in rows], dtype=np.int64),
        values=np.asarray([r[2] for r in rows], dtype=float),
        senses=tuple(Sense(s) for s in d["senses"]),
        rhs=np.asarray(d["rhs"], dtype=float),
        lb=np.asarray([_dec(v) for v in d["lb"]], dtype=float),
        ub=np.asarray([_dec(v) for v in d["ub"]], dtype=float),
    )
    return MilpModel(
        lp=lp,
        integrality=np.asarray(d["integrality"], dtype=bool),
        integer_kind=tuple(d.get("integer_kind", ())),
    )


def save_milp(model: MilpModel, path) -> None:
    with open(path, "w") as f:
        json.dump(milp_to_dict(model), f)


def load_milp(path) -> MilpModel:
    with open(path) as f:
        return milp_from_dict(json.load(f))
