"""System description, hypothesis validation and the sup-norm table.

The coupled system is

    x''(t) + a1(t) x'(t - d_h1(t)) + a2(t) x(t - d_h2(t)) + a3(t) u(t - d_h3(t)) = f1(t)
    u'(t)  + b1(t) u(t - d_g1(t))  + b2(t) x(t - d_g2(t))                         = f2(t)

Lags are stored as d(t) = t - h(t) so that ``0 <= d(t) <= max_lag`` can be
checked directly.  Essential suprema are never computed symbolically: each
coefficient carries declared bounds, and :func:`validate` tries to falsify
them on a dense grid.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .expr import Expression, evaluate_array, parse, to_source

COEFFICIENTS = ("a1", "a2", "a3", "b1", "b2")
DELAYS = ("h1", "h2", "h3", "g1", "g2")
POSITIVE = ("a1", "a2", "b1")
SIGNED = ("a3", "b2")

# relative slack for comparing sampled values with declared bounds
BOUND_RTOL = 1e-12


class NormMode(str, enum.Enum):
    DECLARED = "declared"
    SAMPLED = "sampled"


class NormError(ZeroDivisionError):
    """A ratio norm needs a denominator with a positive lower bound."""


def _as_expr(fn) -> Expression:
    return parse(fn) if isinstance(fn, str) else fn


@dataclass(frozen=True)
class CoefficientSpec:
    """A coefficient c(t) with declared bounds.

    For ``signed`` coefficients the bounds apply to |c(t)|, i.e.
    ``lower <= |c(t)| <= upper`` (``lower`` is normally 0).
    """

    fn: Expression
    lower: float
    upper: float
    signed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "fn", _as_expr(self.fn))
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("coefficient bounds must be finite")
        if self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")
        if self.signed and self.lower < 0:
            raise ValueError("signed coefficients bound |c(t)|; lower must be >= 0")

    @classmethod
    def constant(cls, value: float, signed: bool = False) -> "CoefficientSpec":
        if signed:
            return cls(repr(float(value)), 0.0, abs(value), True)
        return cls(repr(float(value)), value, value)

    @property
    def sup_abs(self) -> float:
        """Declared bound on sup |c(t)|."""
        return self.upper if self.signed else max(abs(self.lower), abs(self.upper))

    @property
    def inf_abs(self) -> float:
        """Declared bound on inf |c(t)| (0 if the interval straddles zero)."""
        if self.signed:
            return self.lower
        if self.lower > 0:
            return self.lower
        if self.upper < 0:
            return -self.upper
        return 0.0


@dataclass(frozen=True)
class DelaySpec:
    lag: Expression
    max_lag: float

    def __post_init__(self):
        object.__setattr__(self, "lag", _as_expr(self.lag))
        object.__setattr__(self, "max_lag", float(self.max_lag))
        if not (self.max_lag >= 0 and math.isfinite(self.max_lag)):
            raise ValueError(f"max_lag must be finite and >= 0, got {self.max_lag}")

    @classmethod
    def constant(cls, lag: float) -> "DelaySpec":
        return cls(repr(float(lag)), lag)


@dataclass(frozen=True)
class SystemSpec:
    a1: CoefficientSpec
    a2: CoefficientSpec
    a3: CoefficientSpec
    b1: CoefficientSpec
    b2: CoefficientSpec
    h1: DelaySpec
    h2: DelaySpec
    h3: DelaySpec
    g1: DelaySpec
    g2: DelaySpec
    t0: float = 0.0

    def __post_init__(self):
        if not (self.t0 >= 0 and math.isfinite(self.t0)):
            raise ValueError(f"t0 must be finite and >= 0, got {self.t0}")

    def coefficients(self) -> dict[str, CoefficientSpec]:
        return {name: getattr(self, name) for name in COEFFICIENTS}

    def delays(self) -> dict[str, DelaySpec]:
        return {name: getattr(self, name) for name in DELAYS}

    @property
    def max_lag(self) -> float:
        return max(d.max_lag for d in self.delays().values())

    @property
    def tau1(self) -> float:
        return self.h1.max_lag

    @property
    def tau2(self) -> float:
        return self.h2.max_lag

    @property
    def sigma1(self) -> float:
        return self.g1.max_lag

    def default_grid(self, period_hint: float | None = None) -> tuple[float, float]:
        """Default validation ``(grid_step, horizon)``."""
        lags = [d.max_lag for d in self.delays().values() if d.max_lag > 0]
        step = min(lags + [1.0]) / 100.0
        horizon = self.t0 + max(100.0, 20.0 * (period_hint or 0.0))
        return step, horizon

    def describe(self) -> dict:
        out = {}
        for name, c in self.coefficients().items():
            out[name] = {"expr": to_source(c.fn), "lower": c.lower, "upper": c.upper,
                         "signed": c.signed}
        for name, d in self.delays().items():
            out[name] = {"lag": to_source(d.lag), "max_lag": d.max_lag}
        out["t0"] = self.t0
        return out


# ------------------------------------------------------------- validation

@dataclass
class ConditionResult:
    name: str
    passed: bool
    detail: str = ""
    first_violation_t: float | None = None

    def __post_init__(self):
        self.passed = bool(self.passed)


@dataclass
class ValidationReport:
    conditions: list[ConditionResult] = field(default_factory=list)
    grid_step: float | None = None
    horizon: float | None = None

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    @property
    def first_failure(self) -> ConditionResult | None:
        for c in self.conditions:
            if not c.passed:
                return c
        return None

    def __getitem__(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "grid_step": self.grid_step,
            "horizon": self.horizon,
            "conditions": [asdict(c) for c in self.conditions],
        }


def sample_grid(t0: float, horizon: float, step: float) -> np.ndarray:
    n = int(math.floor((horizon - t0) / step + 1e-9))
    return t0 + step * np.arange(n + 1)


def _first_violation(mask: np.ndarray, ts: np.ndarray) -> float | None:
    idx = np.flatnonzero(mask)
    return float(ts[idx[0]]) if idx.size else None


def _check_range(name, values, lo, hi, ts, what) -> ConditionResult:
    slack_hi = BOUND_RTOL * max(1.0, abs(hi))
    slack_lo = BOUND_RTOL * max(1.0, abs(lo))
    bad = (values > hi + slack_hi) | (values < lo - slack_lo)
    t_bad = _first_violation(bad, ts)
    if t_bad is None:
        return ConditionResult(name, True, f"{what} within [{lo!r}, {hi!r}]")
    v = float(values[np.flatnonzero(bad)[0]])
    return ConditionResult(
        name, False, f"{what} = {v!r} outside [{lo!r}, {hi!r}] at t = {t_bad!r}", t_bad
    )


def validate(spec: SystemSpec, grid_step: float | None = None,
             horizon: float | None = None) -> ValidationReport:
    """Check declared bounds, lag bounds and the theorem hypotheses.

    Violations are reported, never raised.  For sampled conditions the
    reported time is the smallest violating grid time.
    """
    d_step, d_horizon = spec.default_grid()
    grid_step = d_step if grid_step is None else grid_step
    horizon = d_horizon if horizon is None else horizon
    if grid_step <= 0 or horizon <= spec.t0:
        raise ValueError("need grid_step > 0 and horizon > t0")
    ts = sample_grid(spec.t0, horizon, grid_step)
    report = ValidationReport(grid_step=grid_step, horizon=horizon)

    for name, c in spec.coefficients().items():
        values = evaluate_array(c.fn, ts)
        if c.signed:
            report.conditions.append(
                _check_range(f"bounds:{name}", np.abs(values), c.lower, c.upper, ts, f"|{name}|"))
        else:
            report.conditions.append(
                _check_range(f"bounds:{name}", values, c.lower, c.upper, ts, name))

    for name, d in spec.delays().items():
        values = evaluate_array(d.lag, ts)
        report.conditions.append(
            _check_range(f"lag:{name}", values, 0.0, d.max_lag, ts, f"t - {name}(t)"))

    alpha1 = spec.a1.lower
    big_a2 = spec.a2.upper
    report.conditions.append(ConditionResult(
        "damping",
        alpha1 > 0 and alpha1 ** 2 >= 4 * big_a2,
        f"lower(a1)^2 = {alpha1 ** 2!r} vs 4*upper(a2) = {4 * big_a2!r}",
    ))
    for name in POSITIVE:
        c = getattr(spec, name)
        report.conditions.append(ConditionResult(
            f"positivity:{name}", c.lower > 0 and not c.signed, f"lower({name}) = {c.lower!r}"))
    return report


# ------------------------------------------------------------- norm table

@dataclass(frozen=True)
class NormTable:
    """The ten sup-norm quantities entering the majorant matrix."""

    n_a1: float
    n_a2: float
    n_a3: float
    n_b1: float
    n_b2: float
    r_a2_a1: float
    r_a1_a2: float
    r_a3_a1: float
    r_a3_a2: float
    r_b2_b1: float
    mode: NormMode = NormMode.DECLARED

    def __post_init__(self):
        for k, v in self.values().items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"norm {k} must be finite and nonnegative, got {v}")

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in NORM_FIELDS}

    def to_dict(self) -> dict:
        out = self.values()
        out["mode"] = NormMode(self.mode).value
        return out


NORM_FIELDS = ("n_a1", "n_a2", "n_a3", "n_b1", "n_b2",
               "r_a2_a1", "r_a1_a2", "r_a3_a1", "r_a3_a2", "r_b2_b1")

_RATIOS = {"r_a2_a1": ("a2", "a1"), "r_a1_a2": ("a1", "a2"), "r_a3_a1": ("a3", "a1"),
           "r_a3_a2": ("a3", "a2"), "r_b2_b1": ("b2", "b1")}


def norm_bounds(spec: SystemSpec, mode: NormMode | str = NormMode.DECLARED,
                grid_step: float | None = None, horizon: float | None = None) -> NormTable:
    """Sup norms of the coefficients and of their ratios on ``[t0, inf)``.

    ``declared`` mode uses bound arithmetic only, e.g.
    ``||a1/a2|| <= upper(a1)/lower(a2)``, and is a sound majorant.
    ``sampled`` mode returns grid suprema of the actual functions: sharper,
    but not a proof.
    """
    mode = NormMode(mode)
    coeffs = spec.coefficients()
    for num, den in _RATIOS.values():
        if coeffs[den].inf_abs <= 0:
            raise NormError(f"ratio norm ||{num}/{den}|| needs lower({den}) > 0")

    if mode is NormMode.DECLARED:
        vals = {f"n_{k}": c.sup_abs for k, c in coeffs.items()}
        for key, (num, den) in _RATIOS.items():
            vals[key] = coeffs[num].sup_abs / coeffs[den].inf_abs
        return NormTable(**vals, mode=mode)

    d_step, d_horizon = spec.default_grid()
    ts = sample_grid(spec.t0, d_horizon if horizon is None else horizon,
                     d_step if grid_step is None else grid_step)
    samples = {k: evaluate_array(c.fn, ts) for k, c in coeffs.items()}
    vals = {f"n_{k}": float(np.max(np.abs(v))) for k, v in samples.items()}
    for key, (num, den) in _RATIOS.items():
        den_v = samples[den]
        if np.any(den_v == 0):
            raise NormError(f"{den}(t) vanishes on the sampling grid")
        vals[key] = float(np.max(np.abs(samples[num] / den_v)))
    return NormTable(**vals, mode=mode)
