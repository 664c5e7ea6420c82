"""Lagged mutual information between transmitter drive and receiver crossings.

The simulation is cut into bins of width h; X_k flags bins overlapping any
transmitter-on interval, and Y_k flags bins where the receiver's bin-mean
Ca2+ exceeds tau_rx baseline standard deviations (baseline statistics use
only X = 0 bins). I(Delta) is the plug-in mutual information of the pairs
(X_k, Y_{k+Delta}) in bits; the profile's maximum I* and its smallest argmax
lag summarize coupling strength and delay.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np


class BaselineUndefinedError(ValueError):
    """The schedule leaves no off bins to estimate the receiver baseline."""


@dataclass(frozen=True)
class BinnedSeries:
    bin_width_h: float
    x: np.ndarray  # uint8, transmitter indicator per bin
    y: np.ndarray  # uint8, receiver threshold crossings per bin
    baseline_mu: float
    baseline_sigma: float
    tau_rx: float

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have equal length")

    @property
    def n_bins(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class MiProfile:
    i_of_delta: np.ndarray  # bits, index = lag
    delta_star: int
    i_star: float


def bin_trajectory(trajectory, schedule, receiver_cell: int, h=1.0,
                   tau_rx=2.0, epsilon=1e-9) -> BinnedSeries:
    """Bin one trajectory into (X, Y) indicator series."""
    if h <= 0:
        raise ValueError("bin width must be positive")
    t_sim = trajectory.duration
    n_bins = int(math.floor(t_sim / h))
    if n_bins < 1:
        raise ValueError("trajectory shorter than one bin")
    times = trajectory.times
    trace = trajectory.c_series[:, receiver_cell]

    bin_idx = np.floor(times / h).astype(np.int64)
    keep = bin_idx < n_bins
    sums = np.bincount(bin_idx[keep], weights=trace[keep], minlength=n_bins)
    counts = np.bincount(bin_idx[keep], minlength=n_bins)
    if np.any(counts == 0):
        raise ValueError("bin width finer than the trajectory sampling")
    c_bar = sums / counts

    x = np.zeros(n_bins, dtype=np.uint8)
    for a, b in schedule.on_intervals:
        lo = int(math.floor(a / h))
        hi = min(n_bins, int(math.ceil(b / h)))
        x[lo:hi] = 1

    off = x == 0
    if not np.any(off):
        raise BaselineUndefinedError("no transmitter-off bins for the baseline")
    mu = float(np.mean(c_bar[off]))
    sigma = float(np.std(c_bar[off]))
    z = (c_bar - mu) / (sigma + epsilon)
    y = (z > tau_rx).astype(np.uint8)
    return BinnedSeries(bin_width_h=float(h), x=x, y=y, baseline_mu=mu,
                        baseline_sigma=sigma, tau_rx=float(tau_rx))


def binary_mi_bits(x, y) -> float:
    """Plug-in mutual information of two equal-length binary series, in bits.

    Zero joint cells contribute zero; tiny negative rounding residue clamps
    to 0.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty series")
    n11 = int(np.sum((x == 1) & (y == 1)))
    n10 = int(np.sum((x == 1) & (y == 0)))
    n01 = int(np.sum((x == 0) & (y == 1)))
    n00 = n - n11 - n10 - n01
    total = 0.0
    px = ((n00 + n01) / n, (n10 + n11) / n)
    py = ((n00 + n10) / n, (n01 + n11) / n)
    for xv, yv, cnt in ((0, 0, n00), (0, 1, n01), (1, 0, n10), (1, 1, n11)):
        if cnt == 0:
            continue
        p = cnt / n
        total += p * math.log2(p / (px[xv] * py[yv]))
    if total < -1e-12:
        raise FloatingPointError(f"mutual information {total} below rounding floor")
    return max(total, 0.0)


def lagged_mi(series: BinnedSeries, delta_max: int) -> MiProfile:
    """I(Delta) for Delta = 0..delta_max over pairs (X_k, Y_{k+Delta})."""
    n = series.n_bins
    if delta_max >= n:
        raise ValueError("delta_max must be smaller than the bin count")
    if n - delta_max < 4:
        raise ValueError("too few joint samples at the largest lag")
    prof = np.empty(delta_max + 1)
    for d in range(delta_max + 1):
        prof[d] = binary_mi_bits(series.x[:n - d], series.y[d:])
    delta_star = int(np.argmax(prof))  # smallest argmax on ties
    return MiProfile(i_of_delta=prof, delta_star=delta_star,
                     i_star=float(prof[delta_star]))


def distance_decay(trajectories, graph, schedule, h=1.0, tau_rx=2.0,
                   delta_max=50):
    """Mean lag-optimized MI per hop distance from the transmitter.

    Pools I* over every (run, receiver) pair grouped by BFS hop distance,
    excluding the transmitter itself. Returns rows of
    (hop, mean, ci_low, ci_high, n) with a normal-approximation 95% CI.
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("need at least one trajectory")
    hops = graph.hop_distances(schedule.tx_cell)
    by_hop: dict = {}
    for traj in trajectories:
        for cell in range(graph.n_cells):
            if cell == schedule.tx_cell:
                continue
            series = bin_trajectory(traj, schedule, cell, h=h, tau_rx=tau_rx)
            prof = lagged_mi(series, delta_max)
            by_hop.setdefault(int(hops[cell]), []).append(prof.i_star)
    rows = []
    for hop in sorted(by_hop):
        vals = np.asarray(by_hop[hop])
        if vals.size == 0:
            warnings.warn(f"no receivers at hop {hop}; skipped")
            continue
        mean = float(vals.mean())
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        half = 1.96 * sd / math.sqrt(vals.size)
        rows.append({"hop": hop, "mean_i_star": mean, "ci_low": mean - half,
                     "ci_high": mean + half, "n": int(vals.size)})
    return rows
