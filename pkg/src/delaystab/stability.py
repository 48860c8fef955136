"""Majorant matrix, spectral radius / M-matrix deciders and certificates.

Row and column order of the 5x5 matrix is (x, x', x'', u, u').  Stability is
certified when the hypotheses hold and rho(A) < 1, equivalently when
B = I - A is a nonsingular M-matrix.  Both deciders run on every
certificate and must agree.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import (
    NormError,
    NormMode,
    NormTable,
    SystemSpec,
    ValidationReport,
    norm_bounds,
    validate,
)

ORDER = ("x", "dx", "ddx", "u", "du")

# certificates this close to the boundary are flagged as marginal
MARGINAL_BAND = 1e-9


class Verdict(str, enum.Enum):
    CERTIFIED_STABLE = "certified_stable"
    NOT_CERTIFIED = "not_certified"


class Method(str, enum.Enum):
    THEOREM31 = "theorem31"
    COROLLARY31 = "corollary31"
    DECOUPLED_SECOND_ORDER = "decoupled_second_order"
    FIRST_ORDER = "first_order"


class SpectralRadiusError(ArithmeticError):
    def __init__(self, estimates: tuple[float, float], iterations: int):
        self.estimates = estimates
        self.iterations = iterations
        super().__init__(
            f"power iteration did not converge after {iterations} iterations; "
            f"last estimates {estimates[0]!r}, {estimates[1]!r}"
        )


class SignPatternError(ValueError):
    """An off-diagonal entry of a candidate M-matrix is positive."""


class InconsistentDeciders(AssertionError):
    """Spectral radius and leading minors disagree away from the boundary."""


class PreconditionError(ValueError):
    pass


# ----------------------------------------------------------------- matrix

@dataclass(frozen=True)
class StabilityMatrix:
    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.shape != (5, 5):
            raise ValueError(f"expected a 5x5 matrix, got shape {a.shape}")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("majorant matrix entries must be finite and nonnegative")
        if np.any(np.diag(a) != 0):
            raise ValueError("majorant matrix must have a zero diagonal")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def b(self) -> np.ndarray:
        """B = I - A."""
        return np.eye(5) - self.entries

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


def build_matrix(norms: NormTable, tau1: float, tau2: float, sigma1: float) -> StabilityMatrix:
    if min(tau1, tau2, sigma1) < 0:
        raise ValueError("delay bounds must be nonnegative")
    n = norms
    return StabilityMatrix(np.array([
        [0.0, tau2, tau1 * n.r_a1_a2, n.r_a3_a2, 0.0],
        [n.r_a2_a1, 0.0, tau1, n.r_a3_a1, 0.0],
        [n.n_a2, n.n_a1, 0.0, n.n_a3, 0.0],
        [n.r_b2_b1, 0.0, 0.0, 0.0, sigma1],
        [n.n_b2, 0.0, 0.0, n.n_b1, 0.0],
    ]))


# -------------------------------------------------------- spectral radius

def spectral_radius(m, tol: float = 1e-10, eps: float = 1e-12,
                    max_iter: int = 100_000) -> float:
    """Spectral radius of a nonnegative square matrix by power iteration.

    The iterate is ``v_k = M^k 1`` with ``M = m + eps*I`` and the all-ones
    seed.  For a nonnegative ``M`` its sup norm equals ``||M^k||_inf``, so
    ``||v_k||^(1/k)`` decreases to rho(M) for every nonnegative matrix,
    including reducible and periodic ones.  ``v_k`` is advanced by repeated
    squaring (k = 2^j), which makes the O(log(k)/k) error negligible within a
    few dozen matrix products.  ``max_iter`` bounds the number of squarings.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if np.any(a < 0) or not np.all(np.isfinite(a)):
        raise ValueError("spectral_radius expects a finite nonnegative matrix")
    if not np.any(a):
        return 0.0
    p = a + eps * np.eye(a.shape[0])
    # log ||M^(2^j)|| / 2^j, with p = M^(2^j) / ||M^(2^j)||
    scale = float(np.max(p.sum(axis=1)))
    p = p / scale
    log_rho = math.log(scale)
    prev = math.exp(log_rho)
    for j in range(1, max_iter + 1):
        p = p @ p
        s = float(np.max(p.sum(axis=1)))
        p = p / s
        log_rho += math.log(s) / 2.0 ** j
        est = math.exp(log_rho)
        if abs(est - prev) <= tol / 16 and j >= 8:
            return max(est - eps, 0.0)
        prev = est
    raise SpectralRadiusError((prev, est), max_iter)


# ------------------------------------------------ characteristic polynomial

def characteristic_polynomial(m) -> list[float]:
    """Coefficients of det(lambda*I - m), highest degree first (Faddeev-LeVerrier)."""
    a = np.asarray(m, dtype=float)
    n = a.shape[0]
    coeffs = [1.0]
    mk = np.zeros_like(a)
    c = 1.0
    for k in range(1, n + 1):
        mk = a @ mk + c * np.eye(n)
        c = -float(np.trace(a @ mk)) / k
        coeffs.append(c)
    return coeffs


def _horner(coeffs, x: float) -> float:
    acc = 0.0
    for c in coeffs:
        acc = acc * x + c
    return acc


def _bisect(coeffs, lo: float, hi: float, f_lo: float) -> float:
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return mid
        f_mid = _horner(coeffs, mid)
        if f_mid == 0.0:
            return mid
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid


def real_roots(coeffs) -> list[float]:
    """All real roots of a real polynomial, highest degree first.

    Roots of the derivative split the line into monotone pieces; each piece
    with a sign change is bisected to full precision.  Critical points where
    the polynomial (nearly) vanishes are reported as multiple roots.
    """
    c = list(map(float, coeffs))
    while len(c) > 1 and c[0] == 0.0:
        c.pop(0)
    deg = len(c) - 1
    if deg <= 0:
        return []
    if deg == 1:
        return [-c[1] / c[0]]
    deriv = [ci * (deg - i) for i, ci in enumerate(c[:-1])]
    bound = 1.0 + max(abs(ci / c[0]) for ci in c[1:])
    crit = sorted(x for x in real_roots(deriv) if -bound < x < bound)
    pts = [-bound] + crit + [bound]
    roots = []
    for x in crit:
        scale = sum(abs(ci) * abs(x) ** (deg - i) for i, ci in enumerate(c))
        if abs(_horner(c, x)) <= 1e-12 * max(scale, 1.0):
            roots.append(x)
    for lo, hi in zip(pts[:-1], pts[1:]):
        f_lo, f_hi = _horner(c, lo), _horner(c, hi)
        if f_lo == 0.0:
            roots.append(lo)
        elif f_lo * f_hi < 0:
            roots.append(_bisect(c, lo, hi, f_lo))
    roots.sort()
    out = []
    for r in roots:
        if not out or abs(r - out[-1]) > 1e-12 * (1 + abs(r)):
            out.append(r)
    return out


def perron_root_oracle(m) -> float:
    """Largest real root of the characteristic polynomial of a nonnegative matrix.

    By Perron-Frobenius this is the spectral radius; computed without any
    iteration on the matrix itself.
    """
    roots = real_roots(characteristic_polynomial(m))
    return max(max(roots), 0.0)


# --------------------------------------------------------------- M-matrix

def _det(a: np.ndarray) -> float:
    a = np.array(a, dtype=float)
    n = a.shape[0]
    det = 1.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            return 0.0
        if p != k:
            a[[k, p]] = a[[p, k]]
            det = -det
        det *= float(a[k, k])
        a[k + 1:, k:] -= np.outer(a[k + 1:, k] / a[k, k], a[k, k:])
    return det


def leading_minors(b) -> list[float]:
    b = np.asarray(b, dtype=float)
    return [_det(b[:k, :k]) for k in range(1, b.shape[0] + 1)]


def is_m_matrix(b, tol: float = 1e-12) -> tuple[bool, list[float]]:
    """Test whether a Z-matrix is a nonsingular M-matrix via its leading minors.

    Each leading principal minor is an LU determinant with partial pivoting.
    Minor k counts as positive only above ``tol * scale**k`` where ``scale``
    is the largest absolute entry.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    for i in range(n):
        for j in range(n):
            if i != j and b[i, j] > tol:
                raise SignPatternError(
                    f"off-diagonal entry ({i + 1}, {j + 1}) = {float(b[i, j])!r} is positive")
    minors = leading_minors(b)
    scale = float(np.max(np.abs(b))) or 1.0
    ok = all(mk > tol * scale ** (k + 1) for k, mk in enumerate(minors))
    return ok, minors


# ------------------------------------------------------------ certificates

@dataclass
class Certificate:
    matrix: StabilityMatrix | None
    spectral_radius: float | None
    leading_minors: list[float] | None
    verdict: Verdict
    hypothesis_report: ValidationReport
    method: Method
    reason: str | None = None
    marginal: bool = False
    norms: NormTable | None = None
    corollary_lhs: float | None = None
    cross_check: "Certificate | None" = None
    notes: list[str] = field(default_factory=list)

    @property
    def certified(self) -> bool:
        return self.verdict is Verdict.CERTIFIED_STABLE

    def to_dict(self) -> dict:
        out = {
            "verdict": self.verdict.value,
            "method": self.method.value,
            "reason": self.reason,
            "marginal": self.marginal,
            "matrix": None if self.matrix is None else self.matrix.tolist(),
            "spectral_radius": self.spectral_radius,
            "minors": self.leading_minors,
            "norms": None if self.norms is None else self.norms.to_dict(),
            "hypotheses": self.hypothesis_report.to_dict(),
            "notes": list(self.notes),
        }
        if self.corollary_lhs is not None:
            out["corollary_lhs"] = self.corollary_lhs
        if self.cross_check is not None:
            out["cross_check"] = self.cross_check.to_dict()
        return out


def decide_matrix(matrix: StabilityMatrix) -> tuple[float, list[float], bool, bool]:
    """Run both algebraic deciders; returns (rho, minors, rho<1, marginal)."""
    rho = spectral_radius(matrix.entries)
    m_ok, minors = is_m_matrix(matrix.b)
    r_ok = rho < 1.0
    near = abs(1.0 - rho) <= MARGINAL_BAND or min(minors) <= MARGINAL_BAND
    if r_ok != m_ok:
        if not near:
            raise InconsistentDeciders(
                f"spectral radius {rho!r} and leading minors {minors} disagree")
        r_ok = False
    return rho, minors, r_ok, bool(near)


def _certificate(spec_report: ValidationReport, matrix: StabilityMatrix | None,
                 norms: NormTable | None, method: Method, t0: float) -> Certificate:
    notes = [f"certified at the fixed start time t0 = {t0!r}; no search over t0"]
    if matrix is None:
        failure = spec_report.first_failure
        return Certificate(None, None, None, Verdict.NOT_CERTIFIED, spec_report, method,
                           reason=failure.name if failure else "norms undefined",
                           norms=norms, notes=notes)
    rho, minors, r_ok, near = decide_matrix(matrix)
    failure = spec_report.first_failure
    if failure is not None:
        verdict, reason = Verdict.NOT_CERTIFIED, failure.name
    elif not r_ok:
        verdict, reason = Verdict.NOT_CERTIFIED, "spectral radius >= 1"
    else:
        verdict, reason = Verdict.CERTIFIED_STABLE, None
    return Certificate(matrix, rho, minors, verdict, spec_report, method, reason=reason,
                       marginal=near, norms=norms, notes=notes)


def certify_theorem31(spec: SystemSpec, mode: NormMode | str = NormMode.DECLARED,
                      grid_step: float | None = None,
                      horizon: float | None = None) -> Certificate:
    """Validate the hypotheses, assemble A and decide rho(A) < 1."""
    report = validate(spec, grid_step, horizon)
    decoupled = spec.a3.sup_abs == 0.0 and spec.b2.sup_abs == 0.0
    method = Method.DECOUPLED_SECOND_ORDER if decoupled else Method.THEOREM31
    try:
        norms = norm_bounds(spec, mode, grid_step, horizon)
    except NormError:
        return _certificate(report, None, None, method, spec.t0)
    matrix = build_matrix(norms, spec.tau1, spec.tau2, spec.sigma1)
    return _certificate(report, matrix, norms, method, spec.t0)


def corollary_lhs(norms: NormTable, sigma1: float) -> float:
    """Left side of the scalar test for the system without delays on x, x'.

    Evaluated in exact rational arithmetic on the shortest decimal form of
    each input and rounded once, so decimal bounds give decimal answers
    (0.1*0.3 + 0.1*0.1*0.5 + 0.5*0.5 is exactly 0.285, not 0.28500000000000003).
    """
    q = {k: Fraction(repr(float(v))) for k, v in norms.values().items()}
    s = Fraction(repr(float(sigma1)))
    return float(s * q["n_b1"] + s * q["n_b2"] * q["r_a3_a2"] + q["r_a3_a2"] * q["r_b2_b1"])


def certify_corollary31(spec: SystemSpec, grid_step: float | None = None,
                        horizon: float | None = None,
                        mode: NormMode | str = NormMode.DECLARED) -> Certificate:
    """Scalar certificate for systems whose x and x' terms are undelayed.

    The full matrix test with tau1 = tau2 = 0 is attached as ``cross_check``.
    """
    for name in ("h1", "h2"):
        if getattr(spec, name).max_lag != 0.0:
            raise PreconditionError(
                f"corollary needs an undelayed {name} (max_lag 0), got "
                f"{getattr(spec, name).max_lag!r}")
    report = validate(spec, grid_step, horizon)
    try:
        norms = norm_bounds(spec, mode, grid_step, horizon)
    except NormError:
        return _certificate(report, None, None, Method.COROLLARY31, spec.t0)
    lhs = corollary_lhs(norms, spec.sigma1)
    matrix = build_matrix(norms, 0.0, 0.0, spec.sigma1)
    cross = _certificate(report, matrix, norms, Method.THEOREM31, spec.t0)
    failure = report.first_failure
    if failure is not None:
        verdict, reason = Verdict.NOT_CERTIFIED, failure.name
    elif not lhs < 1.0:
        verdict, reason = Verdict.NOT_CERTIFIED, "corollary sum >= 1"
    else:
        verdict, reason = Verdict.CERTIFIED_STABLE, None
    return Certificate(matrix, cross.spectral_radius, cross.leading_minors, verdict, report,
                       Method.COROLLARY31, reason=reason,
                       marginal=abs(1.0 - lhs) <= MARGINAL_BAND, norms=norms,
                       corollary_lhs=lhs, cross_check=cross, notes=list(cross.notes))


def check_first_order(b1_upper: float, sigma1: float, use_three_halves: bool = False) -> bool:
    """Delay test for u' + b1(t) u(g1(t)) = 0: sigma1 * B1 < 1 (or < 3/2).

    The 3/2 constant is a sharper bound quoted from the literature and is
    only used when explicitly requested.
    """
    if b1_upper <= 0 or sigma1 < 0:
        raise ValueError("need b1_upper > 0 and sigma1 >= 0")
    return sigma1 * b1_upper < (1.5 if use_three_halves else 1.0)
