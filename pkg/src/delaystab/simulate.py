"""Method-of-steps integration of the coupled delay system and empirical probes.

The first-order state is (x, x', u).  Each RK4 step reads delayed values from
the dense history built so far: exact initial functions for times <= t0,
cubic Hermite interpolation between grid nodes afterwards.  x'' and u' at the
nodes are computed from the equations themselves, never by differencing, and
serve as the Hermite slopes of the x' and u channels.

All coefficient, lag and forcing functions depend on t only, so they are
evaluated once, vectorised, on the half-step grid used by the RK4 stages.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .expr import Expression, evaluate, evaluate_array, parse, to_source
from .model import (
    CoefficientSpec,
    ConditionResult,
    SystemSpec,
    ValidationReport,
    _check_range,
    sample_grid,
    validate,
)

CSV_HEADER = "t,x,dx,ddx,u,du"


class SimulationError(RuntimeError):
    pass


class HypothesisError(ValueError):
    pass


def _as_expr(fn) -> Expression:
    return parse(fn) if isinstance(fn, str) else fn


@dataclass(frozen=True)
class InitialData:
    """History of x, x' and u on [t0 - max lag, t0]."""

    phi1: Expression
    phi2: Expression
    psi: Expression

    def __post_init__(self):
        for name in ("phi1", "phi2", "psi"):
            object.__setattr__(self, name, _as_expr(getattr(self, name)))

    @classmethod
    def zero(cls) -> "InitialData":
        return cls("0", "0", "0")

    def to_dict(self) -> dict:
        return {k: to_source(getattr(self, k)) for k in ("phi1", "phi2", "psi")}


@dataclass(frozen=True)
class ForcingSpec:
    f1: Expression
    f2: Expression
    f1_bound: float = 0.0
    f2_bound: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "f1", _as_expr(self.f1))
        object.__setattr__(self, "f2", _as_expr(self.f2))
        if self.f1_bound < 0 or self.f2_bound < 0:
            raise ValueError("forcing bounds must be nonnegative")

    @classmethod
    def zero(cls) -> "ForcingSpec":
        return cls("0", "0", 0.0, 0.0)

    def validate(self, t0: float, horizon: float, grid_step: float) -> ValidationReport:
        ts = sample_grid(t0, horizon, grid_step)
        report = ValidationReport(grid_step=grid_step, horizon=horizon)
        for name in ("f1", "f2"):
            bound = getattr(self, f"{name}_bound")
            values = np.abs(evaluate_array(getattr(self, name), ts))
            report.conditions.append(
                _check_range(f"forcing:{name}", values, 0.0, bound, ts, f"|{name}|"))
        return report

    def to_dict(self) -> dict:
        return {"f1": to_source(self.f1), "f2": to_source(self.f2),
                "f1_bound": self.f1_bound, "f2_bound": self.f2_bound}


def _hermite(y0, d0, y1, d1, h, theta):
    t2 = theta * theta
    t3 = t2 * theta
    return ((2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + theta) * h * d0
            + (-2 * t3 + 3 * t2) * y1 + (t3 - t2) * h * d1)


@dataclass
class Trajectory:
    """Dense solution on a uniform grid.

    ``ddx`` and ``du`` are the right-hand sides of the two equations at the
    grid nodes.  ``value`` reproduces the lookup rule used while integrating.
    """

    t: np.ndarray
    x: np.ndarray
    dx: np.ndarray
    ddx: np.ndarray
    u: np.ndarray
    du: np.ndarray
    history: InitialData | None = None
    step: float = 0.0
    max_lag: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def t0(self) -> float:
        return float(self.t[0])

    def value(self, channel: str, t: float) -> float:
        if channel not in ("x", "dx", "u"):
            raise ValueError(f"unknown channel {channel!r}")
        if t <= self.t0:
            if self.history is None:
                raise ValueError("no history attached to this trajectory")
            fn = {"x": self.history.phi1, "dx": self.history.phi2, "u": self.history.psi}
            return evaluate(fn[channel], t)
        y, d = {"x": (self.x, self.dx), "dx": (self.dx, self.ddx),
                "u": (self.u, self.du)}[channel]
        h = self.step or float(self.t[1] - self.t[0])
        pos = (t - self.t0) / h
        j = min(int(math.floor(pos)), len(self.t) - 2)
        if j < 0 or pos > len(self.t) - 1 + 1e-9:
            raise ValueError(f"t = {t} outside the trajectory")
        return _hermite(y[j], d[j], y[j + 1], d[j + 1], h, pos - j)

    def scaled(self, factor: float) -> "Trajectory":
        return Trajectory(self.t.copy(), factor * self.x, factor * self.dx, factor * self.ddx,
                          factor * self.u, factor * self.du, None, self.step, self.max_lag,
                          dict(self.diagnostics))

    def sup_norms(self) -> dict[str, float]:
        return {k: float(np.max(np.abs(getattr(self, k))))
                for k in ("x", "dx", "ddx", "u", "du")}

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t, self.x, self.dx, self.ddx, self.u, self.du])
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header=CSV_HEADER, comments="")

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        step = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 0.0
        return cls(*(data[:, i].copy() for i in range(6)), step=step)


# ------------------------------------------------------------- integrator

_CURRENT, _HISTORY, _NODE, _GRID = 0, 1, 2, 3


class _Lookup:
    """Precomputed delayed-argument data for one delayed term on the half grid."""

    def __init__(self, lag: Expression, hist_fn: Expression, th: np.ndarray,
                 t0: float, h: float):
        lags = evaluate_array(lag, th)
        if np.any(lags < 0):
            k = int(np.flatnonzero(lags < 0)[0])
            raise SimulationError(
                f"negative lag {lags[k]!r} at t = {th[k]!r} in {to_source(lag)!r}")
        td = th - lags
        pos = (td - t0) / h
        seg = np.floor(pos).astype(np.int64)
        theta = pos - seg
        kind = np.full(th.shape, _GRID, dtype=np.int64)
        kind[theta == 0.0] = _NODE
        hist = td <= t0
        kind[hist] = _HISTORY
        kind[lags == 0.0] = _CURRENT
        hv = np.zeros_like(th)
        if np.any(kind == _HISTORY):
            sel = kind == _HISTORY
            hv[sel] = evaluate_array(hist_fn, td[sel])
        t2 = theta * theta
        t3 = t2 * theta
        self.kind = kind.tolist()
        self.seg = seg.tolist()
        self.theta = theta.tolist()
        self.hist = hv.tolist()
        self.w00 = (2 * t3 - 3 * t2 + 1).tolist()
        self.w10 = ((t3 - 2 * t2 + theta) * h).tolist()
        self.w01 = (-2 * t3 + 3 * t2).tolist()
        self.w11 = ((t3 - t2) * h).tolist()
        self.td = td.tolist()


def _half_grid(t0: float, t_end: float, step: float) -> tuple[int, np.ndarray]:
    n = int(math.ceil((t_end - t0) / step - 1e-9))
    return n, t0 + 0.5 * step * np.arange(2 * n + 1)


def integrate(spec: SystemSpec, init: InitialData | None = None,
              forcing: ForcingSpec | None = None, t_end: float = 10.0,
              step: float | None = None) -> Trajectory:
    """Integrate the forced system from ``spec.t0`` to ``t_end``.

    Classic RK4 on (x, x', u).  Stage k1 reuses the node derivatives.
    Lookups whose delayed time falls after the last completed node (lags
    shorter than the stage offset) extrapolate the last Hermite segment, or
    use a Taylor step from t0 on the first step; node derivatives whose
    delayed time falls inside the just-completed step use a quadratic through
    the known end data.  Both are counted in
    ``diagnostics["short_lag_lookups"]``.
    """
    init = InitialData.zero() if init is None else init
    forcing = ForcingSpec.zero() if forcing is None else forcing
    t0 = spec.t0
    positive = [d.max_lag for d in spec.delays().values() if d.max_lag > 0]
    if step is None:
        step = min(positive + [1.0]) / 20.0
    if not step > 0:
        raise ValueError("step must be positive")
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    diagnostics = {"short_lag_lookups": 0, "step_warning": False}
    if positive and step > min(positive) / 10:
        diagnostics["step_warning"] = True
        warnings.warn(f"step {step} exceeds a tenth of the smallest positive lag "
                      f"{min(positive)}", RuntimeWarning, stacklevel=2)

    n_steps, th = _half_grid(t0, t_end, step)
    h = step
    coef = {name: evaluate_array(c.fn, th).tolist() for name, c in spec.coefficients().items()}
    f1 = evaluate_array(forcing.f1, th).tolist()
    f2 = evaluate_array(forcing.f2, th).tolist()
    a1, a2, a3, b1, b2 = (coef[k] for k in ("a1", "a2", "a3", "b1", "b2"))
    lk_h1 = _Lookup(spec.h1.lag, init.phi2, th, t0, h)  # x'(h1)
    lk_h2 = _Lookup(spec.h2.lag, init.phi1, th, t0, h)  # x(h2)
    lk_h3 = _Lookup(spec.h3.lag, init.psi, th, t0, h)   # u(h3)
    lk_g1 = _Lookup(spec.g1.lag, init.psi, th, t0, h)   # u(g1)
    lk_g2 = _Lookup(spec.g2.lag, init.phi1, th, t0, h)  # x(g2)

    N = n_steps + 1
    X = [0.0] * N
    DX = [0.0] * N
    DDX = [0.0] * N
    U = [0.0] * N
    DU = [0.0] * N
    X[0] = evaluate(init.phi1, t0)
    DX[0] = evaluate(init.phi2, t0)
    U[0] = evaluate(init.psi, t0)
    short = 0

    def look(lk, k, n, cur, y, d, node_pass):
        # channel (y, d) at the delayed time of half index k; nodes 0..n are
        # known, except d[n] while node_pass is set
        nonlocal short
        kind = lk.kind[k]
        if kind == _CURRENT:
            return cur
        if kind == _HISTORY:
            return lk.hist[k]
        j = lk.seg[k]
        if kind == _NODE and j <= n:
            return y[j]
        if j < n - 1 or (j == n - 1 and not node_pass):
            return y[j] * lk.w00[k] + d[j] * lk.w10[k] + y[j + 1] * lk.w01[k] + d[j + 1] * lk.w11[k]
        short += 1
        if node_pass:
            if j >= n:
                return y[n]
            th_ = lk.theta[k]
            return y[j] + h * d[j] * th_ + (y[n] - y[j] - h * d[j]) * th_ * th_
        s = lk.td[k] - (t0 + n * h)
        if n == 0:
            if y is X:
                return X[0] + s * DX[0] + 0.5 * s * s * DDX[0]
            return y[0] + s * d[0]
        return _hermite(y[n - 1], d[n - 1], y[n], d[n], h, 1.0 + s / h)

    def node_derivs(n, k):
        # u' and x'' at node n (half index k) from the equations; u' first,
        # since it is the Hermite slope of u inside the step just taken
        x_, dx_, u_ = X[n], DX[n], U[n]
        DU[n] = f2[k] - b1[k] * look(lk_g1, k, n, u_, U, DU, True) \
            - b2[k] * look(lk_g2, k, n, x_, X, DX, False)
        DDX[n] = f1[k] - a1[k] * look(lk_h1, k, n, dx_, DX, DDX, True) \
            - a2[k] * look(lk_h2, k, n, x_, X, DX, False) \
            - a3[k] * look(lk_h3, k, n, u_, U, DU, False)

    def stage(k, n, xs, dxs, us):
        ddx = f1[k] - a1[k] * look(lk_h1, k, n, dxs, DX, DDX, False) \
            - a2[k] * look(lk_h2, k, n, xs, X, DX, False) \
            - a3[k] * look(lk_h3, k, n, us, U, DU, False)
        du = f2[k] - b1[k] * look(lk_g1, k, n, us, U, DU, False) \
            - b2[k] * look(lk_g2, k, n, xs, X, DX, False)
        return dxs, ddx, du

    node_derivs(0, 0)
    half = 0.5 * h
    sixth = h / 6.0
    for n in range(n_steps):
        k = 2 * n
        x, dx, u = X[n], DX[n], U[n]
        k1x, k1v, k1u = dx, DDX[n], DU[n]
        k2x, k2v, k2u = stage(k + 1, n, x + half * k1x, dx + half * k1v, u + half * k1u)
        k3x, k3v, k3u = stage(k + 1, n, x + half * k2x, dx + half * k2v, u + half * k2u)
        k4x, k4v, k4u = stage(k + 2, n, x + h * k3x, dx + h * k3v, u + h * k3u)
        xn = x + sixth * (k1x + 2 * k2x + 2 * k3x + k4x)
        dxn = dx + sixth * (k1v + 2 * k2v + 2 * k3v + k4v)
        un = u + sixth * (k1u + 2 * k2u + 2 * k3u + k4u)
        if not (abs(xn) < 1e300 and abs(dxn) < 1e300 and abs(un) < 1e300):
            raise SimulationError(f"solution blew up at t = {t0 + (n + 1) * h!r}")
        X[n + 1], DX[n + 1], U[n + 1] = xn, dxn, un
        node_derivs(n + 1, k + 2)

    diagnostics["short_lag_lookups"] = short
    return Trajectory(
        t=th[::2].copy(), x=np.array(X), dx=np.array(DX), ddx=np.array(DDX),
        u=np.array(U), du=np.array(DU), history=init, step=h,
        max_lag=spec.max_lag, diagnostics=diagnostics,
    )


# ---------------------------------------------------- fundamental function

def _fundamental_lanes(a: Expression, b: Expression, t_start: float, step: float,
                       n_steps: int, every: int, record=None):
    """RK4 for x'' + a x' + b x = 0 on many lanes at once.

    Lane i starts at fine index ``i * every`` with (x, x') = (0, 1).  Lanes
    share coefficients, so a single pass yields X(t, s_i) for all i.
    ``record(q, X)`` is called at every fine index q after lane activation.
    """
    n_lanes = n_steps // every + 1
    th = t_start + 0.5 * step * np.arange(2 * n_steps + 1)
    av = evaluate_array(a, th)
    bv = evaluate_array(b, th)
    X = np.zeros(n_lanes)
    V = np.zeros(n_lanes)
    h = step
    for q in range(n_steps + 1):
        if q % every == 0:
            i = q // every
            X[i], V[i] = 0.0, 1.0
        active = q // every + 1
        if record is not None:
            record(q, X[:active])
        if q == n_steps:
            break
        x, v = X[:active], V[:active]
        k = 2 * q
        k1x, k1v = v, -av[k] * v - bv[k] * x
        x2, v2 = x + 0.5 * h * k1x, v + 0.5 * h * k1v
        k2x, k2v = v2, -av[k + 1] * v2 - bv[k + 1] * x2
        x3, v3 = x + 0.5 * h * k2x, v + 0.5 * h * k2v
        k3x, k3v = v3, -av[k + 1] * v3 - bv[k + 1] * x3
        x4, v4 = x + h * k3x, v + h * k3v
        k4x, k4v = v4, -av[k + 2] * v4 - bv[k + 2] * x4
        X[:active] = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        V[:active] = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if not np.all(np.isfinite(X[:active])):
            raise SimulationError(f"fundamental function blew up at t = {t_start + (q + 1) * h!r}")


def fundamental_function(a, b, s: float, t_end: float, step: float):
    """X(t, s) of x'' + a(t) x' + b(t) x = 0 with x(s) = 0, x'(s) = 1.

    Returns ``(t, X)`` on the grid ``s, s + step, ...`` covering ``t_end``.
    """
    a, b = _as_expr(a), _as_expr(b)
    if not t_end > s or not step > 0:
        raise ValueError("need t_end > s and step > 0")
    n = int(math.ceil((t_end - s) / step - 1e-9))
    out = np.empty(n + 1)

    def rec(q, X):
        out[q] = X[0]

    _fundamental_lanes(a, b, s, step, n, n + 1, rec)
    return s + step * np.arange(n + 1), out


@dataclass
class Lemma23Report:
    positivity_min: dict[float, float]
    positive: bool
    mesh_t: np.ndarray
    integrals: np.ndarray
    max_integral: float
    integral_ok: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.positive and self.integral_ok

    def to_dict(self) -> dict:
        return {"positive": self.positive, "integral_ok": self.integral_ok,
                "max_integral": self.max_integral, "tol": self.tol,
                "positivity_min": {repr(k): v for k, v in self.positivity_min.items()}}


def check_lemma23(a: CoefficientSpec, b: CoefficientSpec, s_samples, t_end: float,
                  step: float, t0: float = 0.0, mesh_factor: int = 10,
                  tol: float = 1e-3) -> Lemma23Report:
    """Check positivity of X(t, s) and the bound int_{t0}^t X(t,s) b(s) ds <= 1.

    The integral is a trapezoidal sum over the s-mesh ``t0 + i*mesh_factor*step``
    with every X(., s_i) obtained by its own integration (run as parallel
    lanes).  Hypotheses are checked first, on the declared bounds and on a
    sampling of both coefficients.
    """
    problems = []
    if not a.lower > 0:
        problems.append("lower(a) must be positive")
    if not b.lower > 0:
        problems.append("lower(b) must be positive")
    if not a.lower ** 2 >= 4 * b.upper:
        problems.append(f"lower(a)^2 = {a.lower ** 2!r} < 4*upper(b) = {4 * b.upper!r}")
    if problems:
        raise HypothesisError("; ".join(problems))
    ts = sample_grid(t0, t_end, step)
    for name, c in (("a", a), ("b", b)):
        res = _check_range(name, evaluate_array(c.fn, ts), c.lower, c.upper, ts, name)
        if not res.passed:
            problems.append(res.detail)
    if problems:
        raise HypothesisError("; ".join(problems))

    positivity = {}
    for s in s_samples:
        _, xs = fundamental_function(a.fn, b.fn, float(s), t_end, step)
        positivity[float(s)] = float(np.min(xs[1:])) if len(xs) > 1 else 0.0
    positive = all(v > -tol for v in positivity.values())

    n = int(math.floor((t_end - t0) / step + 1e-9))
    n -= n % mesh_factor
    H = mesh_factor * step
    s_mesh = t0 + H * np.arange(n // mesh_factor + 1)
    b_mesh = evaluate_array(b.fn, s_mesh)
    integrals = np.zeros(len(s_mesh))

    def rec(q, X):
        if q % mesh_factor == 0:
            m = q // mesh_factor
            if m > 0:
                vals = X[: m + 1] * b_mesh[: m + 1]
                integrals[m] = H * (vals.sum() - 0.5 * (vals[0] + vals[-1]))

    _fundamental_lanes(a.fn, b.fn, t0, step, n, mesh_factor, rec)
    max_int = float(np.max(integrals))
    return Lemma23Report(positivity, positive, s_mesh, integrals, max_int,
                         max_int <= 1.0 + tol, tol)


# --------------------------------------------------------- boundedness probe

@dataclass
class ProbeReport:
    sup: dict[str, float]
    sup_early: dict[str, float]
    stabilized: dict[str, bool]
    trajectory: Trajectory
    forcing_report: ValidationReport

    @property
    def bounded(self) -> bool:
        return all(self.stabilized.values())

    def to_dict(self) -> dict:
        return {"sup": self.sup, "sup_first_80pct": self.sup_early,
                "stabilized": self.stabilized, "bounded": self.bounded,
                "forcing": self.forcing_report.to_dict()}


def bohl_perron_probe(spec: SystemSpec, forcing: ForcingSpec, t_end: float,
                      step: float | None = None, check_hypotheses: bool = True) -> ProbeReport:
    """Bounded-input response from zero initial data.

    A channel counts as stabilized when its running sup at 80% of the horizon
    is already within 1% of the sup over the whole horizon.
    """
    if check_hypotheses:
        report = validate(spec)
        if not report.all_passed:
            raise HypothesisError(f"hypothesis {report.first_failure.name} fails: "
                                  f"{report.first_failure.detail}")
    grid = step if step is not None else spec.default_grid()[0]
    forcing_report = forcing.validate(spec.t0, t_end, grid)
    traj = integrate(spec, InitialData.zero(), forcing, t_end, step)
    cut = spec.t0 + 0.8 * (t_end - spec.t0)
    early = traj.t <= cut
    sup, sup_early, stab = {}, {}, {}
    for ch in ("x", "dx", "u"):
        vals = np.abs(getattr(traj, ch))
        sup[ch] = float(vals.max())
        sup_early[ch] = float(vals[early].max())
        stab[ch] = sup_early[ch] >= 0.99 * sup[ch]
    return ProbeReport(sup, sup_early, stab, traj, forcing_report)


# ------------------------------------------------------ a-priori estimates

APRIORI_NAMES = ("x", "dx", "ddx", "u", "du")


@dataclass
class AprioriReport:
    measured: np.ndarray      # (|x|, |x'|, |x''|, |u|, |u'|) sup norms on [t0, t1]
    forcing_majorant: np.ndarray
    bound: np.ndarray         # (I - A)^{-1} F
    chain_rhs: np.ndarray     # A @ measured + F
    matrix: np.ndarray
    tol: float
    trajectory: Trajectory | None = None

    @property
    def bound_ok(self) -> np.ndarray:
        return self.measured <= self.bound + self.tol * (1 + np.abs(self.bound))

    @property
    def chain_ok(self) -> np.ndarray:
        return self.measured <= self.chain_rhs + self.tol * (1 + np.abs(self.chain_rhs))

    @property
    def passed(self) -> bool:
        return bool(np.all(self.bound_ok) and np.all(self.chain_ok))

    def to_dict(self) -> dict:
        return {
            "order": list(APRIORI_NAMES),
            "measured": self.measured.tolist(),
            "forcing_majorant": self.forcing_majorant.tolist(),
            "bound": self.bound.tolist(),
            "chain_rhs": self.chain_rhs.tolist(),
            "bound_ok": self.bound_ok.tolist(),
            "chain_ok": self.chain_ok.tolist(),
            "passed": self.passed,
        }


def forcing_majorant(spec: SystemSpec, forcing: ForcingSpec) -> np.ndarray:
    """Sound upper bounds for the five forcing norms of the a-priori chain."""
    F1, F2 = forcing.f1_bound, forcing.f2_bound
    return np.array([F1 / spec.a2.lower, F1 / spec.a1.lower, F1, F2 / spec.b1.lower, F2])


def verify_apriori(spec: SystemSpec, forcing: ForcingSpec, t1: float,
                   step: float | None = None, certificate=None, matrix=None,
                   tol: float = 1e-9) -> AprioriReport:
    """Compare measured sup norms with the bound X <= (I - A)^{-1} F.

    ``matrix`` overrides the certificate's matrix (any entrywise larger
    majorant gives a weaker but still valid bound).
    """
    from .stability import PreconditionError, certify_theorem31

    if certificate is None:
        certificate = certify_theorem31(spec)
    if not certificate.certified:
        raise PreconditionError(
            f"a-priori bound needs a stability certificate ({certificate.reason})")
    a = np.asarray(certificate.matrix.entries if matrix is None else matrix, dtype=float)
    traj = integrate(spec, InitialData.zero(), forcing, t1, step)
    norms = traj.sup_norms()
    measured = np.array([norms[k] for k in APRIORI_NAMES])
    F = forcing_majorant(spec, forcing)
    bound = np.linalg.solve(np.eye(5) - a, F)
    return AprioriReport(measured, F, bound, a @ measured + F, a, tol, traj)
