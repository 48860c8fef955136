import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaystab.decay import Channel, DecayError, default_window, estimate_decay
from delaystab.simulate import Trajectory


def make_traj(t, x, u=None, max_lag=0.0):
    u = np.zeros_like(t) if u is None else u
    z = np.zeros_like(t)
    return Trajectory(t, x, z, z, u, z, step=float(t[1] - t[0]), max_lag=max_lag)


def test_pure_exponential():
    t = np.linspace(0, 40, 4001)
    est = estimate_decay(make_traj(t, np.exp(-0.5 * t)), "x", window=1.0)
    assert est.mu == pytest.approx(0.5, abs=1e-3)
    assert est.r_squared > 0.9999
    # window maxima sit at the left edge, half a window before the midpoint
    assert est.M == pytest.approx(math.exp(0.25), rel=1e-9)
    assert len(est.midpoints) == 40


def test_damped_oscillation():
    t = np.linspace(0, 40, 8001)
    est = estimate_decay(make_traj(t, np.exp(-0.3 * t) * np.cos(5 * t)), "x", window=2.0)
    assert est.mu == pytest.approx(0.3, abs=5e-3)


def test_max_channel_uses_pointwise_max():
    t = np.linspace(0, 40, 4001)
    x = np.exp(-0.5 * t)
    u = 2 * np.exp(-0.5 * t)
    est = estimate_decay(make_traj(t, x, u), Channel.MAX, window=1.0)
    assert est.M == pytest.approx(2.0 * math.exp(0.25), rel=1e-9)
    assert estimate_decay(make_traj(t, x, u), "u", window=1.0).M == est.M


def test_envelope_dominates_fit_points():
    t = np.linspace(0, 40, 8001)
    est = estimate_decay(make_traj(t, np.exp(-0.3 * t) * np.cos(5 * t)), "x", window=2.0)
    fit = math.log(est.M) - est.mu * (est.midpoints - t[0])
    assert np.max(np.abs(fit - est.log_envelope)) < 0.5


def test_window_must_exceed_lag():
    t = np.linspace(0, 100, 1001)
    with pytest.raises(DecayError, match="largest lag"):
        estimate_decay(make_traj(t, np.exp(-t), max_lag=5.0), window=5.0)


def test_needs_ten_windows():
    t = np.linspace(0, 9, 901)
    with pytest.raises(DecayError, match="at least 10"):
        estimate_decay(make_traj(t, np.exp(-t)), window=1.0)


def test_vanished_signal():
    t = np.linspace(0, 20, 2001)
    x = np.where(t < 2, 1.0, 0.0)
    with pytest.raises(DecayError, match="signal vanished or horizon too short"):
        estimate_decay(make_traj(t, x), "x", window=1.0)


def test_default_window():
    assert default_window(8.0) == 45.0
    t = np.linspace(0, 500, 5001)
    est = estimate_decay(make_traj(t, np.exp(-0.01 * t), max_lag=8.0), "x")
    assert est.window == 45.0


def test_plot_data(tmp_path):
    t = np.linspace(0, 40, 4001)
    est = estimate_decay(make_traj(t, np.exp(-0.5 * t)), "x", window=1.0)
    path = tmp_path / "env.txt"
    est.write_plot_data(path)
    data = np.loadtxt(path, skiprows=1)
    np.testing.assert_array_equal(data[:, 0], est.midpoints)
    np.testing.assert_array_equal(data[:, 1], est.log_envelope)
    assert est.to_dict()["channel"] == "x"


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(1e-3, 1e3), st.floats(0.5, 20.0))
def test_scale_invariance(mu, lam, freq):
    t = np.linspace(0, 40, 4001)
    x = np.exp(-mu * t) * (1.5 + np.sin(freq * t))
    base = estimate_decay(make_traj(t, x), "x", window=2.0)
    scaled = estimate_decay(make_traj(t, x).scaled(lam), "x", window=2.0)
    assert scaled.mu == pytest.approx(base.mu, rel=1e-9, abs=1e-12)
    assert scaled.M == pytest.approx(lam * base.M, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(0.0, 50.0))
def test_time_shift_covariance(mu, delta):
    # the same samples on a grid shifted by delta: mu is unchanged and the
    # envelope referred to the absolute origin, M * exp(mu * t0), gains e^{mu delta}
    t = np.linspace(0, 40, 4001)
    x = np.exp(-mu * t) * (1.5 + np.sin(3 * t))
    a = estimate_decay(make_traj(t, x), "x", window=2.0)
    b = estimate_decay(make_traj(t + delta, x), "x", window=2.0)
    assert b.mu == pytest.approx(a.mu, rel=1e-6)
    origin_a = a.M * math.exp(a.mu * t[0])
    origin_b = b.M * math.exp(b.mu * (t[0] + delta))
    assert origin_b == pytest.approx(origin_a * math.exp(a.mu * delta), rel=1e-6)
