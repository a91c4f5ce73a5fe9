"""Dynamic-transition subproblems for the multiproduct CSTR.

A transition drives the reactor concentration from one steady state to
another over a fixed duration ``theta`` (hours).  Time is scaled to
``tau in [0, 1]`` and the balance

    dc/dtau = (F/V * (c_f - c) - k * c^3) * theta

is discretized with backward Euler on ``n_fe`` elements, the inlet flow
held piecewise constant per element.  The cost is the control effort
``alpha_u * theta * sum((F_m - F_target)^2) * dtau``.

The solver is an augmented-Lagrangian outer loop with projected-Newton
inner iterations on the bound-constrained subproblem.  The converged
equality multipliers give the sensitivity of the optimal cost to the
transition time (``TransitionResult.slope`` is dS/dtheta), which the
Benders layer turns into cuts.

Internally flows are scaled by the reactor volume (u = F/V) so that the
state and control columns of the Jacobian have comparable magnitudes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

KKT_TOL = 1e-6
FEAS_TOL = 1e-9
RHO_INIT = 1e2
RHO_MAX = 1e12
MAX_OUTER = 30
MAX_INNER = 60
THETA_FLOOR = 1e-2  # smallest transition time considered (hours)


@dataclass(frozen=True)
class ReactorParams:
    c_f: float = 1.0       # feed concentration, mol/L
    volume: float = 5000.0  # L
    k_rate: float = 2.0    # L^2 / mol^2 h

    def __post_init__(self):
        if self.c_f <= 0 or self.volume <= 0 or self.k_rate <= 0:
            raise ValueError("reactor parameters must be strictly positive")


def steady_flow(reactor: ReactorParams, c_ss: float) -> float:
    """Inlet flow that holds the reactor at concentration c_ss (dc/dt = 0)."""
    if not (0 < c_ss < reactor.c_f):
        raise ValueError("steady state requires 0 < c_ss < c_f")
    return reactor.volume * reactor.k_rate * c_ss ** 3 / (reactor.c_f - c_ss)


@dataclass(frozen=True)
class TransitionSpec:
    reactor: ReactorParams
    c_start: float
    c_end: float
    f_start: float | None  # None: initial flow unconstrained (startup transition)
    f_end: float
    f_target: float
    c_lo: float
    c_hi: float
    f_lo: float
    f_hi: float
    alpha_u: float = 0.5
    n_fe: int = 30

    def __post_init__(self):
        if self.n_fe < 2:
            raise ValueError("n_fe must be at least 2")
        if not (self.c_lo <= self.c_start <= self.c_hi and self.c_lo <= self.c_end <= self.c_hi):
            raise ValueError("boundary concentrations outside state bounds")
        for f in (self.f_end, self.f_target) + (() if self.f_start is None else (self.f_start,)):
            if not (self.f_lo <= f <= self.f_hi):
                raise ValueError("boundary flows outside control bounds")

    def to_dict(self) -> dict:
        return {
            "schema": "transition-v1",
            "reactor": {"c_f": self.reactor.c_f, "volume": self.reactor.volume,
                        "k_rate": self.reactor.k_rate},
            "c_start": self.c_start, "c_end": self.c_end,
            "f_start": self.f_start, "f_end": self.f_end, "f_target": self.f_target,
            "c_lo": self.c_lo, "c_hi": self.c_hi, "f_lo": self.f_lo, "f_hi": self.f_hi,
            "alpha_u": self.alpha_u, "n_fe": self.n_fe,
        }

    @staticmethod
    def from_dict(d: dict) -> "TransitionSpec":
        if d.get("schema") != "transition-v1":
            raise ValueError(f"unsupported transition schema: {d.get('schema')!r}")
        r = d["reactor"]
        return TransitionSpec(
            reactor=ReactorParams(r["c_f"], r["volume"], r["k_rate"]),
            c_start=d["c_start"], c_end=d["c_end"],
            f_start=d["f_start"], f_end=d["f_end"], f_target=d["f_target"],
            c_lo=d["c_lo"], c_hi=d["c_hi"], f_lo=d["f_lo"], f_hi=d["f_hi"],
            alpha_u=d["alpha_u"], n_fe=d["n_fe"],
        )


@dataclass
class TransitionResult:
    value: float              # optimal cost S(theta)
    slope: float              # dS/dtheta at the solution
    control_traj: np.ndarray  # flow per element, original units (L/h)
    state_traj: np.ndarray    # concentration per node (n_fe + 1 values)
    status: str               # "converged" | "max_iter" | "infeasible"
    kkt_residual: float

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class NlpProblem:
    """Discretized transition NLP for a fixed theta.

    Decision vector x = [c_0..c_n, u_1..u_n] with u = F/V.  Equality
    residuals are the n backward-Euler rows; bounds carry the boundary
    pins (lo == hi).
    """

    def __init__(self, spec: TransitionSpec, theta: float):
        if theta <= 0:
            raise ValueError("theta must be positive")
        self.spec = spec
        self.theta = float(theta)
        n = spec.n_fe
        self.n = n
        self.dtau = 1.0 / n
        V = spec.reactor.volume
        self.V = V
        self.k = spec.reactor.k_rate
        self.c_f = spec.reactor.c_f
        self.u_target = spec.f_target / V
        self.num_vars = 2 * n + 1

        lo = np.empty(self.num_vars)
        hi = np.empty(self.num_vars)
        lo[0] = hi[0] = spec.c_start
        lo[1:n] = spec.c_lo
        hi[1:n] = spec.c_hi
        lo[n] = hi[n] = spec.c_end
        lo[n + 1:] = spec.f_lo / V
        hi[n + 1:] = spec.f_hi / V
        if spec.f_start is not None:
            lo[n + 1] = hi[n + 1] = spec.f_start / V
        lo[2 * n] = hi[2 * n] = spec.f_end / V
        self.lo, self.hi = lo, hi

        # objective scale: alpha_u * theta * dtau * V^2 on squared u deviation
        self.w_obj = spec.alpha_u * self.theta * self.dtau * V * V

    def split(self, x):
        n = self.n
        return x[: n + 1], x[n + 1:]

    def initial_point(self) -> np.ndarray:
        n = self.n
        x = np.empty(self.num_vars)
        x[: n + 1] = np.linspace(self.spec.c_start, self.spec.c_end, n + 1)
        x[n + 1:] = self.u_target
        return np.clip(x, self.lo, self.hi)

    def objective(self, x) -> float:
        _, u = self.split(x)
        return self.w_obj * float(np.sum((u - self.u_target) ** 2))

    def grad_objective(self, x) -> np.ndarray:
        _, u = self.split(x)
        g = np.zeros(self.num_vars)
        g[self.n + 1:] = 2.0 * self.w_obj * (u - self.u_target)
        return g

    def residuals(self, x) -> np.ndarray:
        c, u = self.split(x)
        cm = c[1:]
        rate = u * (self.c_f - cm) - self.k * cm ** 3
        return cm - c[:-1] - self.dtau * self.theta * rate

    def jacobian(self, x) -> np.ndarray:
        n = self.n
        c, u = self.split(x)
        cm = c[1:]
        J = np.zeros((n, self.num_vars))
        idx = np.arange(n)
        J[idx, idx] = -1.0                                         # d/d c_{m-1}
        J[idx, idx + 1] = 1.0 + self.dtau * self.theta * (u + 3.0 * self.k * cm ** 2)
        J[idx, n + 1 + idx] = -self.dtau * self.theta * (self.c_f - cm)
        return J

    def hess_lagrangian(self, x, w) -> np.ndarray:
        """Hessian of f + w' r (w: residual weights mu + rho*r)."""
        n = self.n
        c, u = self.split(x)
        cm = c[1:]
        H = np.zeros((self.num_vars, self.num_vars))
        iF = n + 1 + np.arange(n)
        H[iF, iF] = 2.0 * self.w_obj
        ic = 1 + np.arange(n)
        H[ic, ic] += w * self.dtau * self.theta * 6.0 * self.k * cm
        cross = w * self.dtau * self.theta
        H[ic, iF] += cross
        H[iF, ic] += cross
        return H

    def dobj_dtheta(self, x) -> float:
        _, u = self.split(x)
        return self.spec.alpha_u * self.dtau * self.V ** 2 * float(np.sum((u - self.u_target) ** 2))

    def dres_dtheta(self, x) -> np.ndarray:
        c, u = self.split(x)
        cm = c[1:]
        return -self.dtau * (u * (self.c_f - cm) - self.k * cm ** 3)

    def project(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def projected_gradient(self, x, g) -> np.ndarray:
        pg = g.copy()
        at_lo = x <= self.lo + 1e-12
        at_hi = x >= self.hi - 1e-12
        fixed = self.hi - self.lo <= 1e-14
        pg[at_lo & (g > 0)] = 0.0
        pg[at_hi & (g < 0)] = 0.0
        pg[fixed] = 0.0
        return pg


def discretize(spec: TransitionSpec, theta: float) -> NlpProblem:
    """Build the discretized NLP for a fixed transition time."""
    return NlpProblem(spec, theta)


def _inner_minimize(nlp: NlpProblem, x, mu, rho, tol):
    """Projected Newton on the augmented Lagrangian; returns (x, pg_norm)."""

    def al_value(x_):
        r = nlp.residuals(x_)
        return nlp.objective(x_) + mu @ r + 0.5 * rho * (r @ r)

    val = al_value(x)
    pg_norm = float("inf")
    for _ in range(MAX_INNER):
        r = nlp.residuals(x)
        J = nlp.jacobian(x)
        w = mu + rho * r
        g = nlp.grad_objective(x) + J.T @ w
        pg = nlp.projected_gradient(x, g)
        pg_norm = float(np.abs(pg).max()) if pg.size else 0.0
        if pg_norm <= tol:
            return x, pg_norm
        # active-set reduction: frozen coordinates stay put this iteration
        at_lo = (x <= nlp.lo + 1e-12) & (g > 0)
        at_hi = (x >= nlp.hi - 1e-12) & (g < 0)
        fixed = nlp.hi - nlp.lo <= 1e-14
        idx = np.flatnonzero(~(at_lo | at_hi | fixed))
        if idx.size == 0:
            return x, pg_norm
        H = nlp.hess_lagrangian(x, w) + rho * (J.T @ J)
        d = np.zeros_like(x)
        Hff = H[np.ix_(idx, idx)]
        gf = g[idx]
        ridge = 0.0
        for _attempt in range(6):
            try:
                step = np.linalg.solve(Hff + ridge * np.eye(len(idx)), -gf)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and step @ gf < 0:
                break
            ridge = max(ridge * 10.0, 1e-8 * max(1.0, float(np.abs(Hff).max())))
        else:
            step = -gf  # steepest-descent fallback
        d[idx] = step
        val_floor = 1e-14 * max(1.0, abs(val))
        alpha = 1.0
        accepted = False
        for _ls in range(30):
            x_new = nlp.project(x + alpha * d)
            dd = g @ (x_new - x)
            if dd > -val_floor:
                break  # projected step carries no usable descent
            val_new = al_value(x_new)
            if val_new <= val + 1e-4 * dd:
                x, val = x_new, val_new
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return x, pg_norm
    return x, pg_norm


def solve_transition(spec: TransitionSpec, theta: float) -> TransitionResult:
    """Solve the transition NLP at a fixed theta.

    Returns the optimal cost S(theta), its sensitivity dS/dtheta extracted
    from the converged equality multipliers, and the trajectories.  The
    KKT residual combines the equality violation with the stationarity of
    the Lagrangian (normalized by the objective-gradient scale).
    """
    nlp = discretize(spec, theta)
    x = nlp.initial_point()
    mu = np.zeros(nlp.n)
    rho = RHO_INIT
    g_scale = max(1.0, float(np.abs(nlp.grad_objective(x)).max()), 2.0 * nlp.w_obj)
    rnorm_prev = float("inf")
    status = "max_iter"
    for _outer in range(MAX_OUTER):
        # loose inner solves while far from feasibility, tight near the end
        inner_tol = g_scale * (1e-9 if rnorm_prev < 1e-6 else 1e-6)
        x, _ = _inner_minimize(nlp, x, mu, rho, tol=inner_tol)
        r = nlp.residuals(x)
        rnorm = float(np.abs(r).max()) if r.size else 0.0
        mu = mu + rho * r
        if rnorm <= FEAS_TOL:
            x, _ = _inner_minimize(nlp, x, mu, rho, tol=1e-9 * g_scale)
            status = "converged"
            break
        if rnorm > 0.25 * rnorm_prev:
            rho = min(rho * 10.0, RHO_MAX)
        rnorm_prev = rnorm
    r = nlp.residuals(x)
    g = nlp.grad_objective(x) + nlp.jacobian(x).T @ mu
    pg = nlp.projected_gradient(x, g)
    stat = float(np.abs(pg).max()) / g_scale if pg.size else 0.0
    feas = float(np.abs(r).max()) if r.size else 0.0
    kkt = max(feas, stat)
    if status == "converged" and kkt > KKT_TOL:
        status = "max_iter"
    if status != "converged" and feas > 1e-6 and rho >= RHO_MAX:
        status = "infeasible"
    slope = nlp.dobj_dtheta(x) + float(mu @ nlp.dres_dtheta(x))
    c, u = nlp.split(x)
    return TransitionResult(
        value=nlp.objective(x),
        slope=slope,
        control_traj=u * nlp.V,
        state_traj=c.copy(),
        status=status,
        kkt_residual=kkt,
    )


# ---------------------------------------------------------------------------
# Minimum transition time
# ---------------------------------------------------------------------------


def _dcdt(c, F, reactor: ReactorParams):
    return F / reactor.volume * (reactor.c_f - c) - reactor.k_rate * c ** 3


def bang_bang_time(spec: TransitionSpec, t_cap: float = 200.0) -> float:
    """Continuous-time travel time from c_start to c_end at saturated flow.

    Picks, pointwise, the admissible flow bound that moves the state
    fastest toward the target; RK4 integration.  Returns 0 for an
    already-at-target start and +inf if the target is unreachable within
    t_cap hours.
    """
    r = spec.reactor
    c, target = spec.c_start, spec.c_end
    if abs(c - target) < 1e-12:
        return 0.0
    up = target > c
    t = 0.0
    dt = t_cap / 400000.0

    def best_f(ci):
        d_lo = _dcdt(ci, spec.f_lo, r)
        d_hi = _dcdt(ci, spec.f_hi, r)
        return spec.f_hi if (d_hi > d_lo) == up else spec.f_lo

    while t < t_cap:
        F = best_f(c)
        k1 = _dcdt(c, F, r)
        k2 = _dcdt(c + 0.5 * dt * k1, F, r)
        k3 = _dcdt(c + 0.5 * dt * k2, F, r)
        k4 = _dcdt(c + dt * k3, F, r)
        step = dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        c_new = c + step
        if (up and c_new >= target) or (not up and c_new <= target):
            frac = (target - c) / step if step != 0 else 1.0
            return t + dt * min(max(frac, 0.0), 1.0)
        if abs(step) < 1e-16:
            return float("inf")  # stalled before reaching the target
        c, t = c_new, t + dt
    return float("inf")


def simulate_saturated_euler(spec: TransitionSpec, theta: float) -> np.ndarray:
    """Backward-Euler trajectory under the saturated (bang-bang) flow rule.

    Matches the NLP discretization, so it bounds what any feasible
    discrete control profile can reach within theta.
    """
    r = spec.reactor
    n = spec.n_fe
    dtau = 1.0 / n
    up = spec.c_end > spec.c_start
    c = spec.c_start
    traj = [c]
    for _ in range(n):
        F = spec.f_hi if (_dcdt(c, spec.f_hi, r) > _dcdt(c, spec.f_lo, r)) == up else spec.f_lo
        # solve c_new = c + dtau*theta*g(c_new, F) by Newton on the scalar
        cn = c
        for _it in range(60):
            gval = _dcdt(cn, F, r)
            resid = cn - c - dtau * theta * gval
            dg = -F / r.volume - 3.0 * r.k_rate * cn ** 2
            deriv = 1.0 - dtau * theta * dg
            step = resid / deriv
            cn -= step
            if abs(step) < 1e-13:
                break
        c = cn
        traj.append(c)
    return np.asarray(traj)


def min_transition_time(spec: TransitionSpec, theta_lo: float = THETA_FLOOR,
                        theta_cap: float = 64.0) -> float:
    """Smallest theta at which the transition NLP converges.

    Bisection on a feasibility bracket; the bracket is seeded with the
    continuous bang-bang travel time.  Terminates when the bracket's
    relative width drops below 1e-2 and returns the feasible endpoint.
    """

    def feasible(theta):
        return solve_transition(spec, theta).converged

    t_bb = bang_bang_time(spec)
    if not math.isfinite(t_bb):
        raise ValueError("target state unreachable under the flow bounds")
    if t_bb <= theta_lo:
        if feasible(theta_lo):
            return theta_lo
        t_bb = theta_lo
    hi = max(1.5 * t_bb, theta_lo * 2.0)
    while not feasible(hi):
        hi *= 2.0
        if hi > theta_cap:
            raise ValueError(f"no feasible transition time found below {theta_cap} h")
    lo = max(theta_lo, 0.25 * t_bb)
    if feasible(lo):
        return lo
    while (hi - lo) > 1e-2 * hi:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------


def trajectory_to_csv(result: TransitionResult, path) -> None:
    """Write (tau, c, F) rows; node 0 carries the first element's flow."""
    n = len(result.state_traj) - 1
    with open(path, "w") as f:
        f.write("tau,c,F\n")
        for m in range(n + 1):
            fm = result.control_traj[min(max(m - 1, 0), n - 1)]
            f.write(f"{m / n!r},{result.state_traj[m]!r},{fm!r}\n")


def save_spec(spec: TransitionSpec, path) -> None:
    with open(path, "w") as f:
        json.dump(spec.to_dict(), f)


def load_spec(path) -> TransitionSpec:
    with open(path) as f:
        return TransitionSpec.from_dict(json.load(f))
