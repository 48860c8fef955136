import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaystab.model import NormTable, SystemSpec, CoefficientSpec, DelaySpec
from delaystab.stability import (
    InconsistentDeciders, Method, PreconditionError, SignPatternError, SpectralRadiusError,
    StabilityMatrix, Verdict, build_matrix, certify_corollary31, certify_theorem31,
    characteristic_polynomial, check_first_order, corollary_lhs, decide_matrix,
    is_m_matrix, leading_minors, perron_root_oracle, real_roots, spectral_radius,
)

from conftest import A_TILDE, constant_spec, example_spec

STRUCTURAL_ZEROS = [(0, 4), (1, 4), (3, 1), (3, 2), (4, 1), (4, 2)]


def norms(**kw):
    vals = dict(n_a1=0.0, n_a2=0.0, n_a3=0.0, n_b1=0.0, n_b2=0.0, r_a2_a1=0.0,
                r_a1_a2=0.0, r_a3_a1=0.0, r_a3_a2=0.0, r_b2_b1=0.0)
    vals.update(kw)
    return NormTable(**vals)


def random_zero_diag(rng, scale=1.0, density=None):
    a = rng.uniform(0, scale, (5, 5))
    if density is not None:
        a *= rng.uniform(size=(5, 5)) < density
    np.fill_diagonal(a, 0.0)
    return a


def oracle_radius(m):
    """Largest eigenvalue modulus via numpy, a third independent route."""
    return float(np.max(np.abs(np.linalg.eigvals(m))))


# ------------------------------------------------------------ build_matrix

def test_example_matrix_equals_printed(example):
    from delaystab.model import norm_bounds
    m = build_matrix(norm_bounds(example), 0.1, 0.1, 0.1)
    np.testing.assert_allclose(m.entries, A_TILDE, rtol=1e-15, atol=0)
    assert np.all(m.entries <= A_TILDE + 1e-15)


def test_zero_norms_zero_matrix():
    assert not np.any(build_matrix(norms(), 0, 0, 0).entries)


def test_pattern_with_unit_norms():
    vals = {k: 1.0 for k in norms().values()}
    m = build_matrix(NormTable(**vals), 1, 1, 1).entries
    expected = np.ones((5, 5))
    np.fill_diagonal(expected, 0)
    for i, j in STRUCTURAL_ZEROS:
        expected[i, j] = 0
    expected[2, 4] = 0  # no u' term in the x'' row
    np.testing.assert_array_equal(m, expected)


def test_matrix_rejects_bad_entries():
    with pytest.raises(ValueError):
        StabilityMatrix(-A_TILDE)
    with pytest.raises(ValueError):
        StabilityMatrix(np.eye(5))
    with pytest.raises(ValueError):
        StabilityMatrix(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        build_matrix(norms(), -1, 0, 0)


# --------------------------------------------------------- spectral radius

def test_spectral_radius_examples():
    assert abs(spectral_radius(A_TILDE) - 0.8443) <= 1e-3
    assert spectral_radius(np.zeros((5, 5))) == 0.0
    m = np.zeros((5, 5))
    m[0, 1] = m[1, 0] = 0.5
    assert spectral_radius(m) == pytest.approx(0.5, abs=1e-10)
    assert perron_root_oracle(m) == pytest.approx(0.5, abs=1e-12)


def test_characteristic_polynomial_oracle():
    m = np.zeros((5, 5))
    m[0, 1] = m[1, 0] = 0.5
    # det(lambda I - m) = lambda^3 (lambda^2 - 1/4)
    np.testing.assert_allclose(characteristic_polynomial(m), [1, 0, -0.25, 0, 0, 0],
                               atol=1e-15)
    np.testing.assert_allclose(sorted(real_roots([1, 0, -0.25, 0, 0, 0])),
                               [-0.5, 0, 0.5], atol=1e-8)
    assert real_roots([1.0, 0.0, 1.0]) == []


def test_spectral_radius_reports_non_convergence():
    with pytest.raises(SpectralRadiusError) as exc:
        spectral_radius(A_TILDE, max_iter=3)
    assert len(exc.value.estimates) == 2


def test_power_iteration_matches_oracles_on_random():
    rng = np.random.default_rng(7)
    for _ in range(300):
        a = random_zero_diag(rng, rng.uniform(0.1, 2.0), density=rng.uniform(0.2, 1.0))
        r = spectral_radius(a)
        assert r == pytest.approx(perron_root_oracle(a), abs=1e-9)
        assert r == pytest.approx(oracle_radius(a), abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_spectral_radius_scales(seed, c):
    a = random_zero_diag(np.random.default_rng(seed))
    r = spectral_radius(a)
    assert spectral_radius(c * a) == pytest.approx(c * r, rel=1e-9, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_equivalence_property(seed):
    a = random_zero_diag(np.random.default_rng(seed), 0.6)
    r = spectral_radius(a)
    if abs(r - 1) < 1e-6:
        return
    ok, _ = is_m_matrix(np.eye(5) - a)
    assert (r < 1) == ok


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_monotonicity_property(seed):
    rng = np.random.default_rng(seed)
    a = A_TILDE * rng.uniform(size=(5, 5))
    assert spectral_radius(a) <= spectral_radius(A_TILDE) + 2e-10


# ---------------------------------------------------------------- M-matrix

def test_m_matrix_examples():
    ok, minors = is_m_matrix(np.eye(5) - A_TILDE)
    assert ok and all(m > 0 for m in minors)
    # elimination oracle: numpy determinants of the leading blocks
    b = np.eye(5) - A_TILDE
    np.testing.assert_allclose(minors, [np.linalg.det(b[:k, :k]) for k in range(1, 6)],
                               rtol=1e-12)
    assert is_m_matrix(np.eye(5)) == (True, [1.0] * 5)
    a = np.zeros((5, 5))
    a[0, 1] = a[1, 0] = 1.2
    ok, minors = is_m_matrix(np.eye(5) - a)
    assert not ok
    assert minors[1] == pytest.approx(1 - 1.44)


def test_sign_pattern_error_names_entry():
    b = np.eye(5)
    b[2, 3] = 0.5
    with pytest.raises(SignPatternError, match=r"\(3, 4\)"):
        is_m_matrix(b)


def test_leading_minors_with_pivoting():
    b = np.array([[0.0, 1, 0, 0, 0], [1, 0, 0, 0, 0], [0, 0, 1, 0, 0],
                  [0, 0, 0, 1, 0], [0, 0, 0, 0, 1]])
    assert leading_minors(b) == pytest.approx([0, -1, -1, -1, -1])


def test_deciders_at_the_boundary():
    a = np.zeros((5, 5))
    a[0, 1] = a[1, 0] = 1.0
    rho, minors, ok, marginal = decide_matrix(StabilityMatrix(a))
    assert not ok and marginal
    a[0, 1] = a[1, 0] = 1 - 1e-11
    rho, minors, ok, marginal = decide_matrix(StabilityMatrix(a))
    assert marginal


def test_inconsistent_deciders_raise(monkeypatch):
    import delaystab.stability as stab
    monkeypatch.setattr(stab, "spectral_radius", lambda m: 2.0)
    with pytest.raises(InconsistentDeciders):
        decide_matrix(StabilityMatrix(A_TILDE))


# ------------------------------------------------------------ certificates

def test_example_certified(example):
    cert = certify_theorem31(example)
    assert cert.verdict is Verdict.CERTIFIED_STABLE
    assert cert.method is Method.THEOREM31
    assert cert.spectral_radius <= 0.8443 + 1e-3
    assert all(m > 0 for m in cert.leading_minors)
    assert cert.hypothesis_report.all_passed
    assert any("t0" in n for n in cert.notes)
    d = cert.to_dict()
    json.dumps(d)
    assert d["verdict"] == "certified_stable"


def test_sampled_mode_is_sharper(example):
    declared = certify_theorem31(example, "declared")
    sampled = certify_theorem31(example, "sampled")
    assert sampled.certified
    assert sampled.spectral_radius <= declared.spectral_radius


def test_decoupled_case_certified():
    spec = constant_spec(a1=2.0, a2=0.5, b1=0.5, lags=(0.1, 0.1, 0.0, 0.1, 0.0))
    cert = certify_theorem31(spec)
    assert cert.certified
    assert cert.method is Method.DECOUPLED_SECOND_ORDER
    # hand-built matrix: block triangular, the u-block is [[0, 0.1], [0.5, 0]]
    expected = np.array([
        [0, 0.1, 0.1 * 4.0, 0, 0],
        [0.25, 0, 0.1, 0, 0],
        [0.5, 2.0, 0, 0, 0],
        [0, 0, 0, 0, 0.1],
        [0, 0, 0, 0.5, 0],
    ])
    np.testing.assert_allclose(cert.matrix.entries, expected, rtol=1e-15)
    assert cert.spectral_radius == pytest.approx(oracle_radius(expected), abs=1e-9)
    assert cert.spectral_radius < 1


def test_inflated_tau1_not_certified():
    spec = example_spec(tau1=10.0)
    cert = certify_theorem31(spec)
    assert not cert.certified
    assert cert.reason == "spectral radius >= 1"
    assert cert.matrix.entries[1, 2] == 10.0
    assert oracle_radius(cert.matrix.entries) > 1
    assert not all(m > 0 for m in cert.leading_minors)


def test_failing_hypothesis_is_reason():
    spec = constant_spec(a1=1.0, a2=0.3)
    cert = certify_theorem31(spec)
    assert not cert.certified
    assert cert.reason == "damping"


def test_undefined_norms_not_certified():
    cert = certify_theorem31(constant_spec(a2=0.0))
    assert not cert.certified
    assert cert.matrix is None


# --------------------------------------------------------------- corollary

def test_corollary_example_value():
    spec = example_spec(h1="0", tau1=0.0, h2="0", tau2=0.0)
    cert = certify_corollary31(spec)
    assert cert.corollary_lhs == 0.285
    assert cert.certified and cert.method is Method.COROLLARY31
    assert cert.cross_check.certified
    np.testing.assert_array_equal(cert.cross_check.matrix.entries[:2, 1:3], 0.0)


def test_corollary_decoupled_value():
    spec = constant_spec(a1=2.0, a2=0.5, b1=0.3, lags=(0, 0, 0, 0.1, 0))
    assert certify_corollary31(spec).corollary_lhs == pytest.approx(0.03, rel=1e-15)


def test_corollary_boundary_not_certified():
    assert corollary_lhs(norms(r_a3_a2=1.0, r_b2_b1=1.0), 0.0) == 1.0
    spec = constant_spec(a1=1.0, a2=0.25, a3=0.25, b1=0.3, b2=0.3)
    cert = certify_corollary31(spec)
    assert cert.corollary_lhs == 1.0
    assert not cert.certified
    assert cert.reason == "corollary sum >= 1"


def test_corollary_requires_undelayed_x_terms(example):
    with pytest.raises(PreconditionError, match="h1"):
        certify_corollary31(example)


def test_corollary_implies_matrix_test():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(500):
        lo = rng.uniform(0.05, 2.0, 3)          # lower bounds of a1, a2, b1
        up = lo * rng.uniform(1.0, 1.5, 3)
        a3, b2 = rng.uniform(0, 1.0, 2)
        sigma1 = rng.uniform(0, 2.0)
        table = NormTable(n_a1=up[0], n_a2=up[1], n_a3=a3, n_b1=up[2], n_b2=b2,
                          r_a2_a1=up[1] / lo[0], r_a1_a2=up[0] / lo[1], r_a3_a1=a3 / lo[0],
                          r_a3_a2=a3 / lo[1], r_b2_b1=b2 / lo[2])
        if corollary_lhs(table, sigma1) < 1:
            hits += 1
            m = build_matrix(table, 0.0, 0.0, sigma1)
            assert spectral_radius(m.entries) < 1
            assert is_m_matrix(m.b)[0]
    assert hits > 50


# -------------------------------------------------------------- first order

def test_first_order_examples():
    assert check_first_order(0.3, 0.1)
    assert not check_first_order(0.6, 2.0)
    assert check_first_order(0.6, 2.0, use_three_halves=True)
    assert check_first_order(1e6, 0.0)
    assert not check_first_order(1.0, 1.0)
    with pytest.raises(ValueError):
        check_first_order(0.0, 0.1)
