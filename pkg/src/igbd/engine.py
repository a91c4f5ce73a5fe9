"""Inexact generalized Benders decomposition: the outer loop.

Each iteration solves the master MILP to a per-iteration relative gap
tolerance, harvests the incumbent's complicating-variable values, solves
the value-function subproblems there, and appends one optimality cut per
subproblem.  Two bounds are tracked:

  * ``UB``  — best feasible objective seen (fixed part + subproblem costs);
  * ``TLB`` — the running max of the master's branch-and-bound dual
    bounds.  The dual bound is exactly the sign-safe form of the
    ``v * (1 - eps_MP)`` true-lower-bound update, and is a valid lower
    bound on the monolithic optimum because every master is a relaxation.

The loop stops when the Benders gap (UB - TLB)/max(|UB|, 1e-10) drops
below ``eps_tol`` or the iteration cap T_max is hit.

Cut convention: a cut stores the multiplier ``slope`` of the time-copy
constraint, i.e. the row appended to the master is

    eta >= value_at_point - slope' (y - point)

For a subproblem returning the derivative dS/dy, the multiplier is its
negation (the tangent row then reads eta >= S + dS'(y - point)).
"""

from __future__ import annotations

import json
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np

from .milp import (
    GAP_DENOM_FLOOR,
    MilpModel,
    MilpSolution,
    MilpSolveControl,
    MilpStatus,
    Sense,
    branch_and_bound,
)
from .rl.actions import ACTION_GRID, TOL_HI, TOL_LO, map_action


class MasterInfeasibleError(RuntimeError):
    pass


class SubproblemInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class BendersCut:
    subproblem_id: Hashable
    value_at_point: float
    slope: np.ndarray   # copy-constraint multiplier (paper lambda)
    point: np.ndarray
    iteration: int

    def __post_init__(self):
        if np.shape(self.slope) != np.shape(self.point):
            raise ValueError("cut slope and point must have equal dimension")

    def tangent(self, y: np.ndarray) -> float:
        """Cut right-hand side evaluated at y (an under-estimate of S(y))."""
        return self.value_at_point - float(np.dot(self.slope, y - self.point))


class CutPool:
    """Ordered collection of Benders cuts grouped by subproblem."""

    def __init__(self):
        self._by_sub: dict[Hashable, list[BendersCut]] = {}
        self._all: list[BendersCut] = []

    def add(self, cut: BendersCut) -> None:
        self._by_sub.setdefault(cut.subproblem_id, []).append(cut)
        self._all.append(cut)

    def for_subproblem(self, sub_id: Hashable) -> list[BendersCut]:
        return self._by_sub.get(sub_id, [])

    def __iter__(self):
        return iter(self._all)

    def __len__(self) -> int:
        return len(self._all)


def add_cut(master: MilpModel, cut: BendersCut, eta_col: int,
            y_cols: np.ndarray) -> MilpModel:
    """Append one cut row to a master model.

    The row is  eta + slope' y  >=  value + slope' point.  Exactly one row
    is added; duplicate cuts are redundant but harmless.
    """
    y_cols = np.asarray(y_cols)
    if y_cols.shape != np.shape(cut.slope):
        raise ValueError("cut dimension does not match master column block")
    coefs = {int(eta_col): 1.0}
    for j, s in zip(y_cols, np.atleast_1d(cut.slope)):
        coefs[int(j)] = coefs.get(int(j), 0.0) + float(s)
    rhs = cut.value_at_point + float(np.dot(cut.slope, cut.point))
    lp = master.lp.with_rows([(coefs, Sense.GE, rhs)])
    return MilpModel(lp=lp, integrality=master.integrality,
                     integer_kind=master.integer_kind)


def benders_gap(ub: float, tlb: float) -> float:
    """Outer relative gap (UB - TLB)/max(|UB|, 1e-10); +inf while TLB=-inf."""
    if not np.isfinite(tlb) or not np.isfinite(ub):
        return float("inf")
    return max(0.0, (ub - tlb) / max(abs(ub), GAP_DENOM_FLOOR))


def update_true_lower_bound(tlb_prev: float, master: MilpSolution) -> float:
    """Monotone true-lower-bound update from the master's dual bound."""
    return max(tlb_prev, master.best_bound)


# ---------------------------------------------------------------------------
# Problem interface
# ---------------------------------------------------------------------------


@dataclass
class SubproblemResult:
    value: float      # S at the queried point
    slope: np.ndarray  # dS/dy at the queried point
    cpu_time: float = 0.0


@dataclass
class DecodedMaster:
    fixed_objective: float                       # f1 part, minimization form
    points: list[tuple[Hashable, np.ndarray]]    # active subproblems + values


@dataclass
class MasterArtifacts:
    model: MilpModel
    decode: Callable[[np.ndarray], DecodedMaster]


class DecomposedProblem(ABC):
    """A problem split into a master MILP and value-function subproblems."""

    instance_id: str = "problem"

    @abstractmethod
    def build_master(self, cuts: CutPool) -> MasterArtifacts:
        ...

    @abstractmethod
    def solve_subproblem(self, sub_id: Hashable, point: np.ndarray) -> SubproblemResult:
        ...

    def features(self) -> np.ndarray:
        """Normalized instance parameters for policy state vectors."""
        return np.zeros(0)


# ---------------------------------------------------------------------------
# Trace containers
# ---------------------------------------------------------------------------

TRACE_FIELDS = (
    "iteration", "tolerance", "realized_gap", "master_value", "master_bound",
    "upper_bound", "true_lower_bound", "benders_gap", "master_cpu",
    "max_subproblem_cpu", "master_nodes", "master_pivots",
)
_CPU_FIELDS = {"master_cpu", "max_subproblem_cpu"}


@dataclass
class IterationRecord:
    iteration: int
    tolerance: float
    realized_gap: float
    master_value: float
    master_bound: float
    upper_bound: float
    true_lower_bound: float
    benders_gap: float
    master_cpu: float
    max_subproblem_cpu: float
    master_nodes: int
    master_pivots: int

    def to_dict(self, include_cpu: bool = True) -> dict:
        d = {k: getattr(self, k) for k in TRACE_FIELDS}
        if not include_cpu:
            for k in _CPU_FIELDS:
                d.pop(k)
        return d


@dataclass
class SolveTrace:
    instance_id: str
    records: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    infeasible: bool = False
    final_objective: float = float("inf")
    # complicating-variable snapshots per iteration (not serialized to CSV)
    points: list[dict] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def total_master_cpu(self) -> float:
        return sum(r.master_cpu for r in self.records)

    @property
    def total_cpu(self) -> float:
        return sum(r.master_cpu + r.max_subproblem_cpu for r in self.records)

    @property
    def total_master_pivots(self) -> int:
        return sum(r.master_pivots for r in self.records)

    @property
    def total_master_nodes(self) -> int:
        return sum(r.master_nodes for r in self.records)

    def to_dict(self, include_cpu: bool = True) -> dict:
        d = {
            "schema": "trace-v1",
            "instance_id": self.instance_id,
            "converged": self.converged,
            "infeasible": self.infeasible,
            "final_objective": self.final_objective,
            "iterations": self.iterations,
            "total_master_pivots": self.total_master_pivots,
            "total_master_nodes": self.total_master_nodes,
            "records": [r.to_dict(include_cpu) for r in self.records],
        }
        if include_cpu:
            d["total_master_cpu"] = self.total_master_cpu
            d["total_cpu"] = self.total_cpu
        return d

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(",".join(TRACE_FIELDS) + "\n")
            for r in self.records:
                f.write(",".join(repr(getattr(r, k)) for k in TRACE_FIELDS) + "\n")

    def to_json(self, path, include_cpu: bool = True) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(include_cpu), f, indent=1)


# ---------------------------------------------------------------------------
# Tolerance policies
# ---------------------------------------------------------------------------


@dataclass
class PolicyContext:
    iteration: int            # 1-based index of the iteration being configured
    gap_prev: float           # Benders gap before the iteration (1.0 initially)
    tol_lo: float
    tol_hi: float
    features: np.ndarray
    prev_record: IterationRecord | None
    rng: np.random.Generator


class TolerancePolicy(ABC):
    name = "policy"

    @abstractmethod
    def choose(self, ctx: PolicyContext) -> float:
        ...


class ClassicPolicy(TolerancePolicy):
    """Solve the master to the tightest tolerance every iteration."""

    name = "classic"

    def choose(self, ctx: PolicyContext) -> float:
        return ctx.tol_lo


class ExpDecayPolicy(TolerancePolicy):
    """Open-loop schedule tol_hi * alpha^(l-1), floored at tol_lo."""

    name = "exp"

    def __init__(self, alpha: float = 0.8):
        self.alpha = alpha

    def choose(self, ctx: PolicyContext) -> float:
        return max(ctx.tol_hi * self.alpha ** (ctx.iteration - 1), ctx.tol_lo)


class UniformRandomPolicy(TolerancePolicy):
    """Uniformly random score from the adaptive action grid."""

    name = "rand"

    def choose(self, ctx: PolicyContext) -> float:
        a = float(ctx.rng.choice(ACTION_GRID))
        return map_action(a, ctx.gap_prev, ctx.tol_lo, ctx.tol_hi)


class FixedActionPolicy(TolerancePolicy):
    """Constant score through the adaptive action map (test harness)."""

    name = "fixed"

    def __init__(self, a: float):
        self.a = a

    def choose(self, ctx: PolicyContext) -> float:
        return map_action(self.a, ctx.gap_prev, ctx.tol_lo, ctx.tol_hi)


# ---------------------------------------------------------------------------
# The iGBD loop
# ---------------------------------------------------------------------------


class IgbdRun:
    """Stepwise iGBD state: one ``step(tol)`` call per outer iteration."""

    def __init__(self, problem: DecomposedProblem, *, eps_tol: float = 1e-3,
                 t_max: int = 50, tol_lo: float = TOL_LO, tol_hi: float = TOL_HI,
                 bb_seed: int = 0):
        if eps_tol <= 0:
            raise ValueError("eps_tol must be positive")
        self.problem = problem
        self.eps_tol = eps_tol
        self.t_max = t_max
        self.tol_lo = tol_lo
        self.tol_hi = tol_hi
        self.bb_seed = bb_seed
        self.iteration = 0
        self.ub = float("inf")
        self.tlb = float("-inf")
        self.gap = 1.0  # eps^(0) = 1
        self.cuts = CutPool()
        self.trace = SolveTrace(instance_id=problem.instance_id)

    @property
    def converged(self) -> bool:
        return self.gap < self.eps_tol

    @property
    def exhausted(self) -> bool:
        return self.iteration >= self.t_max

    def step(self, tol: float) -> IterationRecord:
        self.iteration += 1
        artifacts = self.problem.build_master(self.cuts)
        t0 = time.process_time()
        master = branch_and_bound(
            artifacts.model,
            MilpSolveControl(gap_tolerance=tol, seed=self.bb_seed),
        )
        t_master = time.process_time() - t0
        if master.status == MilpStatus.INFEASIBLE:
            self.trace.infeasible = True
            raise MasterInfeasibleError(
                f"master infeasible at iteration {self.iteration}")
        if master.status == MilpStatus.UNBOUNDED:
            raise MasterInfeasibleError(
                f"master unbounded at iteration {self.iteration}")

        self.tlb = update_true_lower_bound(self.tlb, master)
        decoded = artifacts.decode(master.incumbent_x)

        sub_total = 0.0
        max_sub_cpu = 0.0
        for sub_id, point in decoded.points:
            point = np.atleast_1d(np.asarray(point, dtype=float))
            t1 = time.process_time()
            try:
                res = self.problem.solve_subproblem(sub_id, point)
            except SubproblemInfeasibleError:
                raise
            cpu = res.cpu_time if res.cpu_time > 0 else time.process_time() - t1
            max_sub_cpu = max(max_sub_cpu, cpu)
            sub_total += res.value
            slope = -np.atleast_1d(np.asarray(res.slope, dtype=float))
            self.cuts.add(BendersCut(
                subproblem_id=sub_id,
                value_at_point=res.value,
                slope=slope,
                point=point,
                iteration=self.iteration,
            ))

        self.ub = min(self.ub, decoded.fixed_objective + sub_total)
        self.gap = benders_gap(self.ub, self.tlb)

        record = IterationRecord(
            iteration=self.iteration,
            tolerance=tol,
            realized_gap=master.realized_gap,
            master_value=master.incumbent_value,
            master_bound=master.best_bound,
            upper_bound=self.ub,
            true_lower_bound=self.tlb,
            benders_gap=self.gap,
            master_cpu=t_master,
            max_subproblem_cpu=max_sub_cpu,
            master_nodes=master.nodes_explored,
            master_pivots=master.simplex_pivots,
        )
        self.trace.records.append(record)
        self.trace.points.append(
            {str(sid): np.atleast_1d(pt).tolist() for sid, pt in decoded.points})
        self.trace.converged = self.converged
        self.trace.final_objective = self.ub
        return record


def run_igbd(problem: DecomposedProblem, policy: TolerancePolicy, *,
             eps_tol: float = 1e-3, t_max: int = 50, seed: int = 0,
             tol_lo: float = TOL_LO, tol_hi: float = TOL_HI) -> SolveTrace:
    """Run Algorithm-1-style iGBD under a tolerance policy; returns the trace.

    A master infeasibility flags the trace and stops; a subproblem
    infeasibility propagates (the decomposition assumes feasible
    subproblems, so it indicates a modeling error).
    """
    run = IgbdRun(problem, eps_tol=eps_tol, t_max=t_max,
                  tol_lo=tol_lo, tol_hi=tol_hi, bb_seed=seed)
    rng = np.random.default_rng(seed)
    features = problem.features()
    prev: IterationRecord | None = None
    while not run.converged and not run.exhausted:
        ctx = PolicyContext(
            iteration=run.iteration + 1,
            gap_prev=run.gap,
            tol_lo=tol_lo,
            tol_hi=tol_hi,
            features=features,
            prev_record=prev,
            rng=rng,
        )
        tol = policy.choose(ctx)
        if not (tol_lo - 1e-15 <= tol <= tol_hi + 1e-15):
            raise ValueError(f"policy returned tolerance {tol} outside "
                             f"[{tol_lo}, {tol_hi}]")
        try:
            prev = run.step(tol)
        except MasterInfeasibleError:
            return run.trace
    return run.trace
