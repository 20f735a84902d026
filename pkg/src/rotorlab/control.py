"""Deterministic steering of the middle rotor through the bond forces.

With the baths and torques switched off, the outer rotors are treated as
fully actuated, so prescribing their trajectories q_b*(t) turns the bond
forces into a scalar control g(t) = sum_b kappa_b sin(q_b* - q2) acting
on the middle rotor, bounded by [K-, K+].  A three-segment
piecewise-constant plan reaches any (q2, p2) target; outer trajectories
realizing g are synthesized in closed form and bridged across their
discontinuities inside intervals of total length delta, and the full
system replay converges to the target as delta shrinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import ChainParams, State

__all__ = [
    "ForceBounds", "PiecewisePlan", "OuterTrajectories", "DegenerateForce",
    "Unsupported", "Unachievable", "NotConverging", "force_bounds",
    "plan_middle", "synthesize_outer", "verify_controllability",
]

TWO_PI = 2.0 * math.pi


class DegenerateForce(ValueError):
    """Both bond potentials vanish; the middle rotor is uncontrollable."""


class Unsupported(NotImplementedError):
    """Planning with an on-site middle potential is not implemented."""


class Unachievable(ValueError):
    """Requested force exceeds what the bond potentials can deliver."""


class NotConverging(RuntimeError):
    """Final-state error failed to decrease as delta was reduced."""


@dataclass(frozen=True)
class ForceBounds:
    k_minus: float
    k_plus: float

    @property
    def k_star(self) -> float:
        return min(abs(self.k_plus), abs(self.k_minus))


def _extremum(fun, lo: float, hi: float, n_grid: int = 4096):
    """Global min and max of fun on [lo, hi] by dense grid + refinement."""
    from scipy.optimize import minimize_scalar
    s = np.linspace(lo, hi, n_grid, endpoint=False)
    v = fun(s)
    out = []
    for sign in (1.0, -1.0):
        i = int(np.argmin(sign * v))
        a, b = s[i] - (hi - lo) / n_grid, s[i] + (hi - lo) / n_grid
        res = minimize_scalar(lambda x: sign * fun(x), bounds=(a, b),
                              method="bounded",
                              options={"xatol": 1e-12})
        out.append(sign * min(sign * v[i], res.fun))
    return out[0], out[1]  # (min, max)


def force_bounds(params: ChainParams) -> ForceBounds:
    """Extreme total bond force on the middle rotor over the torus."""
    w1 = params.W1.derivative()
    w3 = params.W3.derivative()
    if params.W1.is_zero() and params.W3.is_zero():
        raise DegenerateForce("both bond potentials are zero")
    lo = hi = 0.0
    for w in (w1, w3):
        if not w.harmonics:
            continue
        wmin, wmax = _extremum(w.value, 0.0, TWO_PI)
        lo += wmin
        hi += wmax
    return ForceBounds(k_minus=lo, k_plus=hi)


@dataclass(frozen=True)
class PiecewisePlan:
    """Three-segment acceleration profile for the middle rotor.

    Segment 1 (length theta, force K+ or K-) brings p2 to its target;
    two windows of length delta with forces (+a, -a) then close the
    angle, using that a delta^2 sweeps a full turn when
    delta > sqrt(2 pi / K*).
    """

    segments: tuple  # ((duration, g), ...)
    theta: float
    delta: float
    a: float
    q2i: float
    p2i: float
    target: tuple  # (q2f, p2f)

    @property
    def total_time(self) -> float:
        return sum(d for d, _ in self.segments)

    def state_at(self, t: float):
        """Exact (q2, p2) of the reduced model at time t."""
        q, p = self.q2i, self.p2i
        for dur, g in self.segments:
            dt = min(max(t, 0.0), dur)
            if dt > 0:
                q += p * dt + 0.5 * g * dt * dt
                p += g * dt
            t -= dur
            if t <= 0:
                break
        return q, p

    def g_at(self, t):
        """Piecewise-constant control value at times t (vectorized)."""
        t = np.asarray(t, dtype=float)
        edges = np.cumsum([d for d, _ in self.segments])
        idx = np.minimum(np.searchsorted(edges, t, side="right"),
                         len(self.segments) - 1)
        vals = np.array([g for _, g in self.segments])
        return vals[idx]


def plan_middle(q2i: float, p2i: float, q2f: float, p2f: float,
                bounds: ForceBounds,
                params: ChainParams | None = None) -> PiecewisePlan:
    """Piecewise-constant plan reaching (q2f, p2f) exactly in the reduced
    model, with total time theta + 2 delta, linear in |p2f - p2i|."""
    if params is not None and not params.U2.is_zero():
        raise Unsupported("planning requires no on-site middle potential")
    if not bounds.k_minus < 0 < bounds.k_plus:
        raise DegenerateForce("force bounds do not straddle zero")
    k_star = bounds.k_star
    dp = p2f - p2i
    if dp >= 0:
        g1, theta = bounds.k_plus, dp / bounds.k_plus
    else:
        g1, theta = bounds.k_minus, dp / bounds.k_minus
    delta = math.sqrt(TWO_PI / k_star) * (1.0 + 1e-9)
    q2_theta = q2i + p2i * theta + 0.5 * g1 * theta * theta
    a = ((q2f - q2_theta - 2.0 * delta * p2f) % TWO_PI) / delta ** 2
    segments = ((theta, g1), (delta, a), (delta, -a))
    return PiecewisePlan(segments=segments, theta=theta, delta=delta, a=a,
                         q2i=q2i, p2i=p2i, target=(q2f, p2f))


def _single_cos_kappa(pot) -> float:
    """Coupling strength for W = -kappa cos; None-equivalent 0 if W = 0."""
    if pot.is_zero():
        return 0.0
    if len(pot.harmonics) != 1:
        raise Unsupported("outer synthesis needs W_b = -kappa cos")
    k, a, b = pot.harmonics[0]
    if k != 1 or b != 0 or a >= 0:
        raise Unsupported("outer synthesis needs W_b = -kappa cos")
    return float(-a)


@dataclass
class OuterTrajectories:
    """Piecewise-smooth outer-rotor trajectories realizing the plan.

    Off the bridging windows each q_b* tracks the planned middle angle
    with a constant per-segment phase lag, so the bond forces sum to the
    planned control; inside the windows (total length <= delta_bridge)
    quintic interpolants match position, velocity and acceleration.
    """

    plan: PiecewisePlan
    breaks: np.ndarray          # window boundaries, sorted
    window_mask_kind: np.ndarray
    seg_offsets: np.ndarray     # phase lag per plan segment
    coeffs1: np.ndarray         # quintic coefficients per window, bond 1
    coeffs3: np.ndarray
    windows: np.ndarray         # (n_win, 2) start/end
    delta_bridge: float

    def _ideal(self, t, bond):
        q2, p2 = np.empty_like(t), np.empty_like(t)
        for i, ti in enumerate(np.atleast_1d(t)):
            q2.flat[i], p2.flat[i] = self.plan.state_at(float(ti))
        off = self.seg_offsets[self._segment_index(t)]
        g = self.plan.g_at(t)
        return q2 + off, p2, g

    def _segment_index(self, t):
        edges = np.cumsum([d for d, _ in self.plan.segments])
        return np.minimum(np.searchsorted(edges, t, side="right"),
                          len(self.plan.segments) - 1)

    def evaluate(self, t):
        """(q1*, dq1*, ddq1*, q3*, dq3*, ddq3*) at times t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        qi, vi, gi = self._ideal(t, 1)
        out = []
        for coeffs in (self.coeffs1, self.coeffs3):
            q = qi.copy()
            v = vi.copy()
            acc = gi.copy()
            for w, (t0, t1) in enumerate(self.windows):
                if w == len(self.windows) - 1:
                    sel = (t >= t0) & (t <= t1)
                else:
                    sel = (t >= t0) & (t < t1)
                if not sel.any():
                    continue
                tau = t[sel] - t0
                c = coeffs[w]
                q[sel] = np.polyval(c, tau)
                v[sel] = np.polyval(np.polyder(c), tau)
                acc[sel] = np.polyval(np.polyder(c, 2), tau)
            out.extend((q, v, acc))
        return tuple(out)


def _quintic(t1, y0, v0, a0, y1, v1, a1) -> np.ndarray:
    """Quintic on [0, t1] matching value, slope and curvature at both ends."""
    A = np.zeros((6, 6))
    A[0, 5] = 1.0
    A[1, 4] = 1.0
    A[2, 3] = 2.0
    pw = np.array([t1 ** k for k in range(5, -1, -1)])
    A[3] = pw
    A[4] = np.array([5 * t1 ** 4, 4 * t1 ** 3, 3 * t1 ** 2, 2 * t1, 1, 0])
    A[5] = np.array([20 * t1 ** 3, 12 * t1 ** 2, 6 * t1, 2, 0, 0])
    return np.linalg.solve(A, np.array([y0, v0, a0, y1, v1, a1]))


def synthesize_outer(plan: PiecewisePlan, params: ChainParams, delta: float,
                     boundary: tuple[State, State]) -> OuterTrajectories:
    """Closed-form outer trajectories whose bond forces replay the plan."""
    kap1 = _single_cos_kappa(params.W1)
    kap3 = _single_cos_kappa(params.W3)
    ktot = kap1 + kap3
    if ktot <= 0:
        raise DegenerateForce("no bond coupling available")
    gvals = np.array([g for _, g in plan.segments])
    if np.any(np.abs(gvals) > ktot):
        raise Unachievable("plan force exceeds the bond range")
    # phase lag per segment: q_b* = planned q2 + asin(g / ktot) makes
    # sum_b kappa_b sin(q_b* - q2) = g
    seg_offsets = np.arcsin(gvals / ktot)

    x_i, x_f = boundary
    T = plan.total_time
    edges = np.concatenate([[0.0], np.cumsum([d for d, _ in plan.segments])])
    # one bridge window per segment boundary, two half-windows at the ends
    inner = edges[1:-1]
    w = delta / (len(inner) + 2)  # interior windows plus both endpoints
    windows = [(0.0, w)]
    for tj in inner:
        windows.append((tj - 0.5 * w, tj + 0.5 * w))
    windows.append((T - w, T))
    windows = np.array(windows)

    def ideal_state(tt, eps):
        q2, p2 = plan.state_at(tt + eps * 1e-12)
        seg = np.searchsorted(edges[1:-1] + eps * 1e-9, tt, side="right")
        seg = min(seg, len(plan.segments) - 1)
        off = seg_offsets[seg]
        g = plan.segments[seg][1]
        return q2 + off, p2, g

    coeffs1, coeffs3 = [], []
    for wi, (t0, t1) in enumerate(windows):
        span = t1 - t0
        for bond, (kap, store) in enumerate(((kap1, coeffs1),
                                             (kap3, coeffs3))):
            qb_attr = ("q1", "q3")[bond]
            pb_attr = ("p1", "p3")[bond]
            if wi == 0:
                y0, v0, a0 = getattr(x_i, qb_attr), getattr(x_i, pb_attr), 0.0
                y1, v1, a1 = ideal_state(t1, +1)
            elif wi == len(windows) - 1:
                y0, v0, a0 = ideal_state(t0, -1)
                y1, v1, a1 = getattr(x_f, qb_attr), getattr(x_f, pb_attr), 0.0
                # land on the branch of the target angle nearest the plan
                y1 = y0 + math.remainder(y1 - y0, TWO_PI)
            else:
                y0, v0, a0 = ideal_state(t0, -1)
                y1, v1, a1 = ideal_state(t1, +1)
            store.append(_quintic(span, y0, v0, a0, y1, v1, a1))
    return OuterTrajectories(plan=plan, breaks=edges,
                             window_mask_kind=np.zeros(len(windows)),
                             seg_offsets=seg_offsets,
                             coeffs1=np.array(coeffs1),
                             coeffs3=np.array(coeffs3),
                             windows=windows, delta_bridge=delta)


@njit(cache=True)
def _rk4_middle(q2, p2, h, n_steps, q1_grid, q3_grid, w1, w3, u2):
    """RK4 for the middle rotor with the outer angles given on a half-step
    grid (index 2*i is time i*h)."""
    for i in range(n_steps):
        y0, y1 = q2, p2

        def force(q, j):
            f = 0.0
            for r in range(w1.shape[0]):
                f -= w1[r, 1] * math.cos(w1[r, 0] * (q - q1_grid[j])) \
                    + w1[r, 2] * math.sin(w1[r, 0] * (q - q1_grid[j]))
            for r in range(w3.shape[0]):
                f -= w3[r, 1] * math.cos(w3[r, 0] * (q - q3_grid[j])) \
                    + w3[r, 2] * math.sin(w3[r, 0] * (q - q3_grid[j]))
            for r in range(u2.shape[0]):
                f -= u2[r, 1] * math.cos(u2[r, 0] * q) \
                    + u2[r, 2] * math.sin(u2[r, 0] * q)
            return f

        k1q = y1
        k1p = force(y0, 2 * i)
        k2q = y1 + 0.5 * h * k1p
        k2p = force(y0 + 0.5 * h * k1q, 2 * i + 1)
        k3q = y1 + 0.5 * h * k2p
        k3p = force(y0 + 0.5 * h * k2q, 2 * i + 1)
        k4q = y1 + h * k3p
        k4p = force(y0 + h * k3q, 2 * i + 2)
        q2 = y0 + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        p2 = y1 + h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
    return q2, p2


def _angle_dist(a, b) -> float:
    return abs(math.remainder(a - b, TWO_PI))


def replay_error(x_i: State, x_f: State, delta: float, params: ChainParams,
                 h: float = 1e-5):
    """Integrate the full controlled system and return the final-state
    error (angles compared on the circle) plus the plan used."""
    bounds = force_bounds(params)
    plan = plan_middle(x_i.q2, x_i.p2, x_f.q2, x_f.p2, bounds, params)
    outer = synthesize_outer(plan, params, delta, (x_i, x_f))
    T = plan.total_time
    n_steps = int(math.ceil(T / h))
    h = T / n_steps
    tgrid = np.arange(2 * n_steps + 1) * (h / 2.0)
    q1g, _, _, q3g, _, _ = outer.evaluate(tgrid)
    from .sde import _trig_array
    w1 = _trig_array(params.W1.derivative())
    w3 = _trig_array(params.W3.derivative())
    u2 = _trig_array(params.U2.derivative())
    q2, p2 = _rk4_middle(x_i.q2, x_i.p2, h, n_steps, q1g, q3g, w1, w3, u2)
    err = math.sqrt(
        _angle_dist(q2, x_f.q2) ** 2 + (p2 - x_f.p2) ** 2
        + _angle_dist(q1g[-1], x_f.q1) ** 2 + _angle_dist(q3g[-1], x_f.q3) ** 2)
    return err, plan


def verify_controllability(x_i: State, x_f: State, eps: float,
                           delta_list, params: ChainParams,
                           h: float = 1e-5) -> dict:
    """Replay the plan for each bridging budget delta; report convergence.

    Errors must not increase as delta decreases (10% slack for integrator
    noise); the report records the largest delta reaching eps.
    """
    deltas = sorted(delta_list, reverse=True)
    errors = []
    plan = None
    for d in deltas:
        err, plan = replay_error(x_i, x_f, d, params, h=h)
        errors.append(err)
    for e_prev, e_next in zip(errors, errors[1:]):
        if e_next > 1.1 * e_prev + 1e-9:
            raise NotConverging(
                f"errors {errors} do not decrease along deltas {deltas}")
    achieved = [d for d, e in zip(deltas, errors) if e <= eps]
    return {
        "deltas": deltas,
        "errors": errors,
        "eps": eps,
        "achieved": bool(achieved),
        "delta0": max(achieved) if achieved else None,
        "total_time": plan.total_time,
        "theta": plan.theta,
    }
