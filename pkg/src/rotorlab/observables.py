"""Steady-state statistics: histograms, heat fluxes, slow-drift estimation
and regime analysis for the middle-rotor momentum."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats
from scipy.ndimage import gaussian_filter1d

from .model import ChainParams
from .sde import RngSpec, SimRecord, drift_ensemble

__all__ = [
    "Histogram", "SeriesHistogram", "DriftEstimate", "FluxReport",
    "RegimeViolation", "DwellStats", "heat_flux", "conditional_drift",
    "find_modes", "dwell_times", "hysteresis_thresholds", "ks_statistic",
]

BURN_FRAC = 0.1


class RegimeViolation(RuntimeError):
    """The slow-momentum excursion left the nearly-constant-p2 regime."""


@dataclass
class Histogram:
    lo: float
    hi: float
    n_bins: int
    counts: np.ndarray = field(default=None)
    below: int = 0
    above: int = 0

    def __post_init__(self):
        if self.n_bins < 1:
            raise ValueError("n_bins must be >= 1")
        if not self.hi > self.lo:
            raise ValueError("need hi > lo")
        if self.counts is None:
            self.counts = np.zeros(self.n_bins, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.below + self.above

    @property
    def bin_width(self) -> float:
        return (self.hi - self.lo) / self.n_bins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_bins + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.lo + (np.arange(self.n_bins) + 0.5) * self.bin_width

    def record(self, samples) -> None:
        samples = np.atleast_1d(np.asarray(samples, dtype=float))
        idx = np.floor((samples - self.lo) / self.bin_width).astype(np.int64)
        self.below += int(np.count_nonzero(idx < 0))
        self.above += int(np.count_nonzero(idx >= self.n_bins))
        inside = idx[(idx >= 0) & (idx < self.n_bins)]
        self.counts += np.bincount(inside, minlength=self.n_bins)

    def density(self) -> np.ndarray:
        """Per-bin density; integrates to the in-range mass fraction."""
        if self.total == 0:
            return np.zeros(self.n_bins)
        return self.counts / (self.total * self.bin_width)

    def merge(self, other: "Histogram") -> "Histogram":
        if (other.lo, other.hi, other.n_bins) != (self.lo, self.hi, self.n_bins):
            raise ValueError("histogram ranges differ")
        return Histogram(self.lo, self.hi, self.n_bins,
                         self.counts + other.counts,
                         self.below + other.below, self.above + other.above)


@dataclass
class SeriesHistogram:
    """Observer adapter: histogram one state column (0..5 = q1..p3)."""

    hist: Histogram
    column: int
    burn_frac: float = BURN_FRAC

    def observe(self, t, states) -> None:
        n0 = int(self.burn_frac * len(t))
        self.hist.record(states[n0:, self.column])


@dataclass(frozen=True)
class FluxReport:
    J1: float
    J3: float
    stderr1: float
    stderr3: float

    def to_json_obj(self) -> dict:
        return {"J1": self.J1, "J3": self.J3,
                "stderr1": self.stderr1, "stderr3": self.stderr3}


def _batch_mean_stderr(values: np.ndarray, n_batches: int = 50):
    n = len(values)
    n_batches = min(n_batches, n)
    edges = np.linspace(0, n, n_batches + 1).astype(int)
    bm = np.array([values[a:b].mean() for a, b in zip(edges[:-1], edges[1:])])
    se = bm.std(ddof=1) / math.sqrt(n_batches) if n_batches > 1 else float("inf")
    return float(bm.mean()), float(se)


def heat_flux(series, params: ChainParams) -> FluxReport:
    """Time-averaged energy injection rate gamma_b (T_b - p_b^2) + tau_b p_b.

    ``series`` is either a SimRecord (uses its every-step moment batches)
    or a plain (n, 6) state array, in which case the first 10% is dropped
    as burn-in and errors come from 50 contiguous batches.
    """
    g1, g3 = float(params.gamma1), float(params.gamma3)
    T1, T3 = float(params.T1), float(params.T3)
    t1, t3 = float(params.tau1), float(params.tau3)
    if isinstance(series, SimRecord):
        mom = series.moments
        bm1 = g1 * (T1 - mom.batch_means(0, 2)) + t1 * mom.batch_means(0, 1)
        bm3 = g3 * (T3 - mom.batch_means(2, 2)) + t3 * mom.batch_means(2, 1)
        n = len(bm1)
        return FluxReport(float(bm1.mean()), float(bm3.mean()),
                          float(bm1.std(ddof=1) / math.sqrt(n)),
                          float(bm3.std(ddof=1) / math.sqrt(n)))
    states = np.asarray(series, dtype=float)
    states = states[int(BURN_FRAC * len(states)):]
    j1, se1 = _batch_mean_stderr(g1 * (T1 - states[:, 3] ** 2) + t1 * states[:, 3])
    j3, se3 = _batch_mean_stderr(g3 * (T3 - states[:, 5] ** 2) + t3 * states[:, 5])
    return FluxReport(j1, j3, se1, se3)


@dataclass(frozen=True)
class DriftEstimate:
    omega: float
    window: float
    n_paths: int
    mean_slope: float
    stderr: float


def conditional_drift(params: ChainParams, omega_list, window: float,
                      n_paths: int, rng: RngSpec, h: float = 1e-3,
                      tail_frac: float = 0.5) -> list[DriftEstimate]:
    """Slow drift of p2 started at p2 = omega, one estimate per omega.

    Paths start from uniform angles and bath-Gaussian outer momenta; the
    regressed observable is p2 + Phi2(q)/p2, whose correction cancels the
    O(1/omega) oscillation of raw p2 so the p2^-3 drift is resolvable at
    modest path counts.  The slope is fit on the window tail, after the
    outer momenta have relaxed; the error bar is the spread over 10
    independent path groups.
    """
    out = []
    for j, omega in enumerate(omega_list):
        if omega == 0:
            raise ValueError("omega must be nonzero")
        t, mean, per_group = drift_ensemble(
            params, float(omega), window, n_paths,
            RngSpec(rng.master_seed + j), h=h)
        if np.max(np.abs(mean - omega)) > 0.1 * abs(omega):
            raise RegimeViolation(
                f"p2 moved more than 10% from omega={omega} within the window")
        tail = t >= (1.0 - tail_frac) * window
        A = np.vstack([t[tail], np.ones(tail.sum())]).T
        slope = float(np.linalg.lstsq(A, mean[tail] - omega, rcond=None)[0][0])
        gslopes = [np.linalg.lstsq(A, g[tail] - omega, rcond=None)[0][0]
                   for g in per_group]
        se = float(np.std(gslopes, ddof=1) / math.sqrt(len(gslopes)))
        out.append(DriftEstimate(float(omega), window, n_paths, slope, se))
    return out


def find_modes(hist: Histogram, smoothing_width: float = 2.0,
               min_prominence_frac: float = 0.02):
    """Local maxima of the kernel-smoothed density as (location, height).

    Smoothing is Gaussian with width in bin units; peaks below the
    prominence floor (fraction of the global maximum) are discarded as
    sampling noise.  Sorted by height, ties broken by location.
    """
    if hist.total == 0:
        raise ValueError("histogram is empty")
    dens = gaussian_filter1d(hist.density(), smoothing_width, mode="nearest")
    peaks, props = signal.find_peaks(
        dens, prominence=min_prominence_frac * float(dens.max()))
    modes = [(float(hist.centers[i]), float(dens[i])) for i in peaks]
    modes.sort(key=lambda m: (-m[1], m[0]))
    return modes


def hysteresis_thresholds(mode_lo: float, mode_hi: float,
                          band_frac: float = 0.2):
    """Switching thresholds around the midpoint, band 20% of separation."""
    if not mode_hi > mode_lo:
        raise ValueError("need mode_hi > mode_lo")
    mid = 0.5 * (mode_lo + mode_hi)
    half_band = 0.5 * band_frac * (mode_hi - mode_lo)
    return mid - half_band, mid + half_band


@dataclass(frozen=True)
class DwellStats:
    mean_dwell_lo: float
    mean_dwell_hi: float
    n_dwells_lo: int
    n_dwells_hi: int
    censored: bool  # True when the series never completes a dwell


def dwell_times(t, series, thresholds) -> DwellStats:
    """Mean sojourn time in the low / high regime with hysteresis.

    ``thresholds = (down, up)``: the state switches to the high regime
    only when the series exceeds ``up`` and back only when it drops below
    ``down``.  The unfinished dwell at each end is censored (excluded
    from the means).
    """
    down, up = thresholds
    if not up >= down:
        raise ValueError("need up >= down")
    t = np.asarray(t, dtype=float)
    x = np.asarray(series, dtype=float)
    regime = 0 if x[0] < up else 1
    start = t[0]
    durations = ([], [])
    first = True  # leading dwell is censored (unknown entry time)
    for i in range(1, len(x)):
        if regime == 0 and x[i] > up:
            if not first:
                durations[0].append(t[i] - start)
            first = False
            regime, start = 1, t[i]
        elif regime == 1 and x[i] < down:
            if not first:
                durations[1].append(t[i] - start)
            first = False
            regime, start = 0, t[i]
    lo, hi = durations
    return DwellStats(
        mean_dwell_lo=float(np.mean(lo)) if lo else math.inf,
        mean_dwell_hi=float(np.mean(hi)) if hi else math.inf,
        n_dwells_lo=len(lo),
        n_dwells_hi=len(hi),
        censored=not (lo or hi),
    )


def ks_statistic(samples, mean: float = 0.0, std: float = 1.0) -> float:
    """Kolmogorov-Smirnov distance of samples to Gaussian(mean, std^2)."""
    return float(stats.kstest(np.asarray(samples, dtype=float),
                              "norm", args=(mean, std)).statistic)
