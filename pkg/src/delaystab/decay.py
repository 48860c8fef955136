"""Exponential envelope M * exp(-mu (t - t0)) fitted to a trajectory."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .simulate import Trajectory

# windows whose maximum is below this fraction of the global maximum are
# treated as floating-point noise
FLOOR = 1e-14


class Channel(str, enum.Enum):
    X = "x"
    U = "u"
    MAX = "max"


class DecayError(ValueError):
    pass


@dataclass
class DecayEstimate:
    M: float
    mu: float
    r_squared: float
    channel: Channel
    window: float
    midpoints: np.ndarray = field(repr=False, default=None)
    log_envelope: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {"M": self.M, "mu": self.mu, "r_squared": self.r_squared,
                "channel": Channel(self.channel).value, "window": self.window,
                "n_points": 0 if self.midpoints is None else int(len(self.midpoints))}

    def write_plot_data(self, path) -> None:
        np.savetxt(path, np.column_stack([self.midpoints, self.log_envelope]),
                   fmt="%.17g", header="window_midpoint log_envelope", comments="")


def default_window(max_lag: float) -> float:
    return 5.0 * (max_lag + 1.0)


def _signal(traj: Trajectory, channel: Channel) -> np.ndarray:
    if channel is Channel.X:
        return np.abs(traj.x)
    if channel is Channel.U:
        return np.abs(traj.u)
    return np.maximum(np.abs(traj.x), np.abs(traj.u))


def estimate_decay(traj: Trajectory, channel: Channel | str = Channel.MAX,
                   window: float | None = None) -> DecayEstimate:
    """Least-squares fit of log(window maxima) against window midpoints.

    Windows tile ``[t0, t_end]`` from the start; an incomplete last window is
    dropped.  The slope gives ``-mu``, the intercept at ``t0`` gives ``log M``.
    """
    channel = Channel(channel)
    window = default_window(traj.max_lag) if window is None else float(window)
    if not window > traj.max_lag:
        raise DecayError(f"window {window} must exceed the largest lag {traj.max_lag}")
    t = np.asarray(traj.t, dtype=float)
    t0 = float(t[0])
    span = float(t[-1]) - t0
    n_win = int(math.floor(span / window + 1e-9))
    if n_win < 10:
        raise DecayError(f"trajectory spans {span / window:.3g} windows; need at least 10")
    sig = _signal(traj, channel)
    edges = t0 + window * np.arange(n_win + 1)
    idx = np.searchsorted(t, edges - 1e-9 * window)
    env = np.array([sig[idx[i]:max(idx[i + 1], idx[i] + 1)].max() for i in range(n_win)])
    mid = edges[:-1] + 0.5 * window
    keep = env > FLOOR * env.max()
    if keep.sum() < 3:
        raise DecayError("signal vanished or horizon too short")
    xs = mid[keep] - t0
    ys = np.log(env[keep])
    slope, intercept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + intercept)
    ss_tot = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    return DecayEstimate(M=float(math.exp(intercept)), mu=float(-slope), r_squared=r2,
                         channel=channel, window=window, midpoints=mid[keep],
                         log_envelope=ys)
