"""Time integration of the rotor-chain Langevin dynamics.

Two schemes are provided: Euler-Maruyama as a baseline and a Strang
splitting (default) whose dissipative substep is an exact
Ornstein-Uhlenbeck transition, so the stiff friction part carries no
discretization error.  Randomness is organized as one master seed with
one independent substream per trajectory; within one build, identical
(seed, config) runs are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from .model import ChainParams, State, TrigPotential

__all__ = [
    "RngSpec", "IntegratorSpec", "NonFinite", "SimRecord", "MomentStats",
    "step", "simulate", "ensemble", "small_model_moments",
    "small_model_ensemble", "drift_ensemble",
]

TWO_PI = 2.0 * math.pi

SCHEME_EM = 0
SCHEME_SPLIT = 1
_SCHEMES = {"euler_maruyama": SCHEME_EM, "strang_splitting": SCHEME_SPLIT}


class NonFinite(FloatingPointError):
    """A state component left the finite range; carries the step index."""

    def __init__(self, step_index: int):
        super().__init__(f"non-finite state at step {step_index} (reduce h)")
        self.step_index = step_index


@dataclass(frozen=True)
class RngSpec:
    """Master seed plus the trajectory-index substream derivation rule."""

    master_seed: int

    def generator(self, traj_index: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.master_seed,
                                    spawn_key=(traj_index,))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class IntegratorSpec:
    scheme: str = "strang_splitting"
    h: float = 1e-3
    total_time: float = 1.0
    record_stride: int = 1

    def __post_init__(self):
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.h))


def _trig_array(pot: TrigPotential) -> np.ndarray:
    """Pack a trig polynomial as rows (k, cos coeff, sin coeff)."""
    out = np.zeros((len(pot.harmonics), 3))
    for i, (k, a, b) in enumerate(pot.harmonics):
        out[i] = (float(k), float(a), float(b))
    return out


class _NumericParams(NamedTuple):
    """Float view of ChainParams as consumed by the kernels."""

    w1: np.ndarray
    w3: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    gamma1: float
    gamma3: float
    T1: float
    T3: float
    tau1: float
    tau3: float


def numeric_params(params: ChainParams) -> _NumericParams:
    return _NumericParams(
        w1=_trig_array(params.W1.derivative()),
        w3=_trig_array(params.W3.derivative()),
        u1=_trig_array(params.U1.derivative()),
        u2=_trig_array(params.U2.derivative()),
        u3=_trig_array(params.U3.derivative()),
        gamma1=float(params.gamma1), gamma3=float(params.gamma3),
        T1=float(params.T1), T3=float(params.T3),
        tau1=float(params.tau1), tau3=float(params.tau3),
    )


@njit(inline="always")
def _trig_eval(arr, s):
    v = 0.0
    for i in range(arr.shape[0]):
        k = arr[i, 0]
        v += arr[i, 1] * math.cos(k * s) + arr[i, 2] * math.sin(k * s)
    return v


@njit(inline="always")
def _forces(q1, q2, q3, w1, w3, u1, u2, u3):
    w1v = _trig_eval(w1, q2 - q1)
    w3v = _trig_eval(w3, q2 - q3)
    f1 = w1v - _trig_eval(u1, q1)
    f2 = -w1v - w3v - _trig_eval(u2, q2)
    f3 = w3v - _trig_eval(u3, q3)
    return f1, f2, f3


class _StepConsts(NamedTuple):
    """Per-step constants: EM noise amplitudes and exact OU half-step data."""

    amp1: float
    amp3: float
    e1: float
    e3: float
    sd1: float
    sd3: float
    m1: float
    m3: float


def _step_consts(np_: "_NumericParams", h: float) -> _StepConsts:
    e1 = math.exp(-np_.gamma1 * h / 2.0)
    e3 = math.exp(-np_.gamma3 * h / 2.0)
    return _StepConsts(
        amp1=math.sqrt(2.0 * np_.gamma1 * np_.T1 * h),
        amp3=math.sqrt(2.0 * np_.gamma3 * np_.T3 * h),
        e1=e1, e3=e3,
        sd1=math.sqrt(np_.T1 * (1.0 - e1 * e1)),
        sd3=math.sqrt(np_.T3 * (1.0 - e3 * e3)),
        m1=np_.tau1 / np_.gamma1 if np_.gamma1 > 0 else 0.0,
        m3=np_.tau3 / np_.gamma3 if np_.gamma3 > 0 else 0.0,
    )


@njit(inline="always")
def _step_em(x, h, np_, c, n1, n3):
    f1, f2, f3 = _forces(x[0], x[1], x[2], np_.w1, np_.w3, np_.u1, np_.u2, np_.u3)
    x[0] = (x[0] + h * x[3]) % TWO_PI
    x[1] = (x[1] + h * x[4]) % TWO_PI
    x[2] = (x[2] + h * x[5]) % TWO_PI
    x[3] += h * (f1 + np_.tau1 - np_.gamma1 * x[3]) + c.amp1 * n1
    x[4] += h * f2
    x[5] += h * (f3 + np_.tau3 - np_.gamma3 * x[5]) + c.amp3 * n3


@njit(inline="always")
def _ou_half(x, c, n1, n3):
    # exact transition of dp = (tau - gamma p) dt + sqrt(2 gamma T) dB over h/2
    x[3] = c.m1 + (x[3] - c.m1) * c.e1 + c.sd1 * n1
    x[5] = c.m3 + (x[5] - c.m3) * c.e3 + c.sd3 * n3


@njit(inline="always")
def _step_split(x, h, np_, c, n1a, n3a, n1b, n3b):
    _ou_half(x, c, n1a, n3a)
    f1, f2, f3 = _forces(x[0], x[1], x[2], np_.w1, np_.w3, np_.u1, np_.u2, np_.u3)
    x[3] += 0.5 * h * f1
    x[4] += 0.5 * h * f2
    x[5] += 0.5 * h * f3
    x[0] = (x[0] + h * x[3]) % TWO_PI
    x[1] = (x[1] + h * x[4]) % TWO_PI
    x[2] = (x[2] + h * x[5]) % TWO_PI
    f1, f2, f3 = _forces(x[0], x[1], x[2], np_.w1, np_.w3, np_.u1, np_.u2, np_.u3)
    x[3] += 0.5 * h * f1
    x[4] += 0.5 * h * f2
    x[5] += 0.5 * h * f3
    _ou_half(x, c, n1b, n3b)


@njit(cache=True)
def _py_step_em(x, h, np_, c, n1, n3):
    _step_em(x, h, np_, c, n1, n3)


@njit(cache=True)
def _py_step_split(x, h, np_, c, n1a, n3a, n1b, n3b):
    _step_split(x, h, np_, c, n1a, n3a, n1b, n3b)


@njit(cache=True)
def _run(rng, x, n_steps, h, scheme, np_, c, rec, stride,
         mom, batch_len, burn_steps):
    """Integrate n_steps, record every stride-th state, accumulate moments.

    mom has shape (n_batches, 3, 4): per-batch sums of p_i^1..p_i^4 past
    the burn-in.  Returns -1 on success or the failing step index.
    """
    nrec = 0
    rec[nrec, 0] = 0.0
    for j in range(6):
        rec[nrec, 1 + j] = x[j]
    nrec += 1
    n_batches = mom.shape[0]
    dps = 2 if scheme == 0 else 4  # draws per step
    chunk = 1 << 16
    buf = rng.standard_normal(chunk * dps)
    bi = 0
    for s in range(n_steps):
        if bi >= buf.size:
            buf = rng.standard_normal(chunk * dps)
            bi = 0
        if scheme == 0:
            _step_em(x, h, np_, c, buf[bi], buf[bi + 1])
        else:
            _step_split(x, h, np_, c, buf[bi], buf[bi + 1],
                        buf[bi + 2], buf[bi + 3])
        bi += dps
        if s >= burn_steps and n_batches > 0:
            b = (s - burn_steps) // batch_len
            if b >= n_batches:
                b = n_batches - 1
            for j in range(3):
                p = x[3 + j]
                p2 = p * p
                mom[b, j, 0] += p
                mom[b, j, 1] += p2
                mom[b, j, 2] += p2 * p
                mom[b, j, 3] += p2 * p2
        if (s + 1) % stride == 0:
            ok = True
            for j in range(6):
                if not math.isfinite(x[j]):
                    ok = False
            if not ok:
                return s
            rec[nrec, 0] = (s + 1) * h
            for j in range(6):
                rec[nrec, 1 + j] = x[j]
            nrec += 1
    for j in range(6):
        if not math.isfinite(x[j]):
            return n_steps - 1
    return -1


@dataclass
class MomentStats:
    """Per-batch momentum power sums (n_batches, 3, 4) past burn-in."""

    sums: np.ndarray
    counts: np.ndarray

    def mean(self, comp: int, power: int = 1) -> float:
        return float(self.sums[:, comp, power - 1].sum() / self.counts.sum())

    def batch_means(self, comp: int, power: int = 1) -> np.ndarray:
        return self.sums[:, comp, power - 1] / self.counts

    def mean_stderr(self, comp: int, power: int = 1):
        """Batch-means estimate of the time-average and its standard error."""
        bm = self.batch_means(comp, power)
        n = len(bm)
        m = float(bm.mean())
        se = float(bm.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
        return m, se

    def excess_kurtosis(self, comp: int):
        """Excess kurtosis of p_comp with a batch-means standard error."""
        bm2 = self.batch_means(comp, 2)
        bm4 = self.batch_means(comp, 4)
        kurt = float(self.sums[:, comp, 3].sum() / self.counts.sum()
                     / self.mean(comp, 2) ** 2 - 3.0)
        per_batch = bm4 / bm2 ** 2 - 3.0
        n = len(per_batch)
        se = float(per_batch.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
        return kurt, se


@dataclass
class SimRecord:
    t: np.ndarray
    states: np.ndarray  # shape (n_rec, 6), columns q1,q2,q3,p1,p2,p3
    moments: MomentStats
    final: State

    @property
    def p(self) -> np.ndarray:
        return self.states[:, 3:6]

    @property
    def q(self) -> np.ndarray:
        return self.states[:, 0:3]


def step(x: State, params: ChainParams, spec: IntegratorSpec,
         noise: np.ndarray) -> State:
    """One integration step with explicit noise.

    ``noise`` holds standard normal draws in channel order (B1, B3): two
    for euler_maruyama, four for strang_splitting (first half-step pair,
    then second half-step pair).
    """
    np_ = numeric_params(params)
    c = _step_consts(np_, spec.h)
    arr = np.array([x.q1, x.q2, x.q3, x.p1, x.p2, x.p3])
    noise = np.asarray(noise, dtype=float).ravel()
    if spec.scheme == "euler_maruyama":
        _py_step_em(arr, spec.h, np_, c, noise[0], noise[1])
    else:
        _py_step_split(arr, spec.h, np_, c, noise[0], noise[1],
                       noise[2], noise[3])
    if not np.all(np.isfinite(arr)):
        raise NonFinite(0)
    return State(*arr)


def simulate(x0: State, params: ChainParams, spec: IntegratorSpec,
             rng: RngSpec | np.random.Generator, observers=(),
             n_batches: int = 100, burn_frac: float = 0.1) -> SimRecord:
    """Integrate one trajectory; deterministic given (x0, params, spec, rng).

    Records the state every ``record_stride`` steps and streams the series
    to each observer via ``observer.observe(t, states)``.  Momentum power
    sums past the burn-in are accumulated at every step in ``n_batches``
    contiguous batches for batch-means error bars.
    """
    gen = rng.generator(0) if isinstance(rng, RngSpec) else rng
    np_ = numeric_params(params)
    n_steps = spec.n_steps
    stride = spec.record_stride
    n_rec = n_steps // stride + 1
    rec = np.empty((n_rec, 7))
    burn_steps = int(burn_frac * n_steps)
    n_eff = n_steps - burn_steps
    if n_eff <= 0:
        n_batches = 0
    else:
        n_batches = min(n_batches, n_eff)
    batch_len = max(1, -(-n_eff // n_batches)) if n_batches else 1
    mom = np.zeros((n_batches, 3, 4))
    x = np.array([x0.q1, x0.q2, x0.q3, x0.p1, x0.p2, x0.p3])
    bad = _run(gen, x, n_steps, spec.h, _SCHEMES[spec.scheme], np_,
               _step_consts(np_, spec.h), rec, stride, mom, batch_len,
               burn_steps)
    if bad >= 0:
        raise NonFinite(int(bad))
    counts = np.full(n_batches, batch_len, dtype=np.int64)
    if n_batches:
        counts[-1] = n_eff - batch_len * (n_batches - 1)
    record = SimRecord(t=rec[:, 0], states=rec[:, 1:7],
                       moments=MomentStats(mom, counts),
                       final=State(*x))
    for obs in observers:
        obs.observe(record.t, record.states)
    return record


def ensemble(x0_sampler, params: ChainParams, spec: IntegratorSpec,
             rng: RngSpec, n_traj: int, reducer):
    """Independent trajectories on derived substreams, reduced per path.

    ``x0_sampler(gen)`` draws the initial state from the trajectory's own
    generator; ``reducer(record)`` maps a trajectory to a float or array.
    Returns (per-path values, mean, stderr of the mean).
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    vals = []
    for i in range(n_traj):
        gen = rng.generator(i)
        x0 = x0_sampler(gen)
        vals.append(reducer(simulate(x0, params, spec, gen)))
    vals = np.asarray(vals, dtype=float)
    mean = np.sum(vals, axis=0) / n_traj  # pairwise summation, order-fixed
    se = vals.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else \
        np.full_like(np.asarray(mean, dtype=float), np.inf)
    return vals, mean, se


def small_model_moments(omega: float, gamma: float, T: float, kappa: float,
                        t, p0: float = 0.0):
    """Exact moments of  dp = kappa sin(omega t) dt - gamma p dt + sqrt(2 gamma T) dB.

    Returns (mean, second moment).  The mean solves the linear ODE exactly,
    including the e^{-gamma t} transient of the forcing response; the
    variance is the pure OU variance T(1 - e^{-2 gamma t}).
    """
    if omega == 0:
        raise ValueError("omega must be nonzero")
    t = np.asarray(t, dtype=float)
    denom = gamma * gamma + omega * omega
    mean = kappa * (gamma * np.sin(omega * t) - omega * np.cos(omega * t)
                    + omega * np.exp(-gamma * t)) / denom \
        + p0 * np.exp(-gamma * t)
    var = T * (1.0 - np.exp(-2.0 * gamma * t))
    return mean, mean * mean + var


@njit(cache=True)
def _small_model_kernel(rng, n_paths, n_steps, h, omega, gamma, T, kappa, p0):
    s1 = 0.0
    s2 = 0.0
    amp = math.sqrt(2.0 * gamma * T * h)
    for i in range(n_paths):
        p = p0
        for s in range(n_steps):
            t = s * h
            p += h * (kappa * math.sin(omega * t) - gamma * p) \
                + amp * rng.standard_normal()
        s1 += p
        s2 += p * p
    return s1, s2


def small_model_ensemble(omega, gamma, T, kappa, t, n_paths,
                         rng: RngSpec, h: float = 1e-3, p0: float = 0.0):
    """Monte Carlo (mean, second moment, stderr of second moment) at time t."""
    gen = rng.generator(0)
    n_groups = 20
    per = n_paths // n_groups
    m2 = np.empty(n_groups)
    m1 = np.empty(n_groups)
    n_steps = int(round(t / h))
    for g in range(n_groups):
        s1, s2 = _small_model_kernel(gen, per, n_steps, h, omega, gamma,
                                     T, kappa, p0)
        m1[g] = s1 / per
        m2[g] = s2 / per
    se = float(m2.std(ddof=1) / math.sqrt(n_groups))
    return float(m1.mean()), float(m2.mean()), se


@njit(cache=True)
def _drift_kernel(rng, states, n_steps, h, scheme, np_, c, phi2_trig,
                  stride, sums, gsums, n_groups):
    """Advance all paths together; record group sums of p2 + Phi2(q)/p2.

    phi2_trig rows are (kind, k, a, b) with kind 0/1/2 selecting the angle
    argument q2-q1 / q2-q3 / q2, so Phi2 = sum a cos(k s) + b sin(k s).
    """
    n_paths = states.shape[0]
    n_rec = n_steps // stride
    dps = 2 if scheme == 0 else 4
    for i in range(n_paths):
        g = i % n_groups
        x = states[i]
        buf = rng.standard_normal(n_steps * dps)
        bi = 0
        for s in range(n_steps):
            if scheme == 0:
                _step_em(x, h, np_, c, buf[bi], buf[bi + 1])
            else:
                _step_split(x, h, np_, c, buf[bi], buf[bi + 1],
                            buf[bi + 2], buf[bi + 3])
            bi += dps
            if (s + 1) % stride == 0:
                phi2 = 0.0
                for r in range(phi2_trig.shape[0]):
                    kind = int(phi2_trig[r, 0])
                    if kind == 0:
                        arg = x[1] - x[0]
                    elif kind == 1:
                        arg = x[1] - x[2]
                    else:
                        arg = x[1]
                    ks = phi2_trig[r, 1] * arg
                    phi2 += phi2_trig[r, 2] * math.cos(ks) \
                        + phi2_trig[r, 3] * math.sin(ks)
                val = x[4] + phi2 / x[4]
                j = (s + 1) // stride - 1
                sums[j] += val
                gsums[g, j] += val
    return n_rec


def drift_ensemble(params: ChainParams, omega: float, window: float,
                   n_paths: int, rng: RngSpec, h: float = 1e-3,
                   stride: int = 100, scheme: str = "strang_splitting",
                   n_groups: int = 10):
    """Ensemble mean of the corrected slow momentum started from p2 = omega.

    Initial q are uniform on the torus and p1, p3 bath-Gaussian.  Returns
    (times, ensemble mean of p2 + Phi2/p2, per-group means) on the record
    grid; the correction removes the O(1/omega) oscillation so the slow
    drift is visible at modest path counts.
    """
    gen = rng.generator(0)
    np_ = numeric_params(params)
    states = np.empty((n_paths, 6))
    states[:, 0:3] = gen.uniform(0.0, TWO_PI, size=(n_paths, 3))
    states[:, 3] = gen.normal(0.0, math.sqrt(np_.T1), size=n_paths)
    states[:, 5] = gen.normal(0.0, math.sqrt(np_.T3), size=n_paths)
    states[:, 4] = omega

    rows = []
    for kind, pot in ((0, params.W1), (1, params.W3), (2, params.U2)):
        for k, a, b in pot.harmonics:
            rows.append((float(kind), float(k), float(a), float(b)))
    phi2_trig = np.array(rows, dtype=float) if rows else np.zeros((0, 4))

    n_steps = int(round(window / h))
    n_rec = n_steps // stride
    sums = np.zeros(n_rec)
    gsums = np.zeros((n_groups, n_rec))
    _drift_kernel(gen, states, n_steps, h, _SCHEMES[scheme], np_,
                  _step_consts(np_, h), phi2_trig, stride, sums, gsums,
                  n_groups)
    times = (np.arange(1, n_rec + 1)) * stride * h
    per_group = gsums / (n_paths // n_groups if n_paths % n_groups == 0
                         else np.bincount(np.arange(n_paths) % n_groups,
                                          minlength=n_groups)[:, None])
    return times, sums / n_paths, per_group
