"""Model definitions: parameters, state, Hamiltonian, forces and SDE drift.

The chain is three rotors with angles q1, q2, q3 on the circle and momenta
p1, p2, p3.  Rotors 1 and 3 touch Langevin baths (rates gamma_b,
temperatures T_b) and feel constant torques tau_b; the middle rotor couples
to its neighbours through interaction potentials W_b(q2 - q_b) and all
rotors may carry pinning potentials U_i(q_i).  Potentials are finite
trigonometric polynomials with exact rational coefficients, which keeps the
symbolic averaging class closed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .phasepoly import PhasePoly, _as_fraction

__all__ = ["TrigPotential", "ChainParams", "State", "hamiltonian", "forces",
           "sde_drift", "generator_apply", "DEFAULT_PARAMS_DICT"]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class TrigPotential:
    """Finite trig polynomial  sum_k  a_k cos(k s) + b_k sin(k s),  k >= 1.

    The absence of a k = 0 harmonic fixes the additive constant to zero
    mean, so averaged quantities carry no arbitrary offset.
    """

    harmonics: tuple[tuple[int, Fraction, Fraction], ...] = ()

    def __post_init__(self):
        norm = []
        for k, a, b in self.harmonics:
            k = int(k)
            if k < 1:
                raise ValueError("harmonic index must be >= 1 (zero mean required)")
            a, b = _as_fraction(a), _as_fraction(b)
            if a == 0 and b == 0:
                continue
            norm.append((k, a, b))
        object.__setattr__(self, "harmonics", tuple(norm))

    @classmethod
    def zero(cls) -> "TrigPotential":
        return cls(())

    @classmethod
    def cosine(cls, coeff=1, k: int = 1) -> "TrigPotential":
        return cls(((k, _as_fraction(coeff), Fraction(0)),))

    @classmethod
    def sine(cls, coeff=1, k: int = 1) -> "TrigPotential":
        return cls(((k, Fraction(0), _as_fraction(coeff)),))

    def is_zero(self) -> bool:
        return not self.harmonics

    def value(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for k, a, b in self.harmonics:
            out += float(a) * np.cos(k * s) + float(b) * np.sin(k * s)
        return out if out.shape else float(out)

    def derivative(self) -> "TrigPotential":
        """d/ds of the potential, again as a TrigPotential-shaped object."""
        return TrigPotential(tuple((k, k * b, -k * a) for k, a, b in self.harmonics))

    def sup_abs(self) -> float:
        """Cheap upper bound sum |a_k| + |b_k| on the sup norm."""
        return float(sum(abs(a) + abs(b) for _, a, b in self.harmonics))

    def as_phasepoly(self, wave: tuple[int, int, int]) -> PhasePoly:
        """Symbolic form with argument s = wave . (q1, q2, q3).

        E.g. ``W1.as_phasepoly((-1, 1, 0))`` represents W1(q2 - q1).
        """
        out = PhasePoly.zero()
        w1, w2, w3 = wave
        for k, a, b in self.harmonics:
            if a:
                out = out + PhasePoly.cos_wave(k * w1, k * w2, k * w3, a)
            if b:
                out = out + PhasePoly.sin_wave(k * w1, k * w2, k * w3, b)
        return out

    def to_json_obj(self):
        return [[k, [a.numerator, a.denominator], [b.numerator, b.denominator]]
                for k, a, b in self.harmonics]

    @classmethod
    def from_json_obj(cls, obj) -> "TrigPotential":
        harmonics = []
        for rec in obj:
            k, a, b = rec
            harmonics.append((int(k), _rat(a), _rat(b)))
        return cls(tuple(harmonics))


def _rat(x) -> Fraction:
    if isinstance(x, (list, tuple)):
        num, den = x
        return Fraction(int(num), int(den))
    return _as_fraction(x)


# wave templates for the arguments of the five potentials
_W1_WAVE = (-1, 1, 0)   # q2 - q1
_W3_WAVE = (0, 1, -1)   # q2 - q3
_U1_WAVE = (1, 0, 0)
_U2_WAVE = (0, 1, 0)
_U3_WAVE = (0, 0, 1)


@dataclass(frozen=True)
class ChainParams:
    """Physical parameters of the chain; all entries exact rationals.

    Only ``W_b`` being not identically zero is validated here.  The full
    non-degeneracy condition (some derivative of w_b nonvanishing at every
    point of the circle) has no simple algorithmic criterion for general
    trig polynomials and remains the caller's responsibility.
    """

    gamma1: Fraction = Fraction(1)
    gamma3: Fraction = Fraction(1)
    T1: Fraction = Fraction(1)
    T3: Fraction = Fraction(1)
    tau1: Fraction = Fraction(0)
    tau3: Fraction = Fraction(0)
    W1: TrigPotential = field(default_factory=lambda: TrigPotential.cosine(-1))
    W3: TrigPotential = field(default_factory=lambda: TrigPotential.cosine(-1))
    U1: TrigPotential = field(default_factory=TrigPotential.zero)
    U2: TrigPotential = field(default_factory=TrigPotential.zero)
    U3: TrigPotential = field(default_factory=TrigPotential.zero)

    def __post_init__(self):
        for name in ("gamma1", "gamma3", "T1", "T3", "tau1", "tau3"):
            object.__setattr__(self, name, _as_fraction(getattr(self, name)))
        if self.gamma1 <= 0 or self.gamma3 <= 0:
            raise ValueError("bath coupling rates gamma_b must be positive")
        if self.T1 <= 0 or self.T3 <= 0:
            raise ValueError("bath temperatures T_b must be positive")
        if self.W1.is_zero() and self.W3.is_zero():
            raise ValueError("at least one interaction potential W_b must be nonzero")

    # symbolic forms, built on demand (cheap, params are small)
    def W1_poly(self) -> PhasePoly:
        return self.W1.as_phasepoly(_W1_WAVE)

    def W3_poly(self) -> PhasePoly:
        return self.W3.as_phasepoly(_W3_WAVE)

    def w1_poly(self) -> PhasePoly:
        return self.W1.derivative().as_phasepoly(_W1_WAVE)

    def w3_poly(self) -> PhasePoly:
        return self.W3.derivative().as_phasepoly(_W3_WAVE)

    def u_polys(self) -> tuple[PhasePoly, PhasePoly, PhasePoly]:
        return (
            self.U1.derivative().as_phasepoly(_U1_WAVE),
            self.U2.derivative().as_phasepoly(_U2_WAVE),
            self.U3.derivative().as_phasepoly(_U3_WAVE),
        )

    def phi2_poly(self) -> PhasePoly:
        """Force on the middle rotor: -w1 - w3 - u2."""
        u2 = self.U2.derivative().as_phasepoly(_U2_WAVE)
        return -(self.w1_poly() + self.w3_poly() + u2)

    def Phi2_poly(self) -> PhasePoly:
        """Middle-rotor potential W1 + W3 + U2 (so phi2 = -d Phi2/d q2)."""
        return self.W1_poly() + self.W3_poly() + self.U2.as_phasepoly(_U2_WAVE)

    def phi_b_poly(self, b: int) -> PhasePoly:
        """Outer force phi_b = w_b - u_b for b in {1, 3}."""
        if b == 1:
            return self.w1_poly() - self.U1.derivative().as_phasepoly(_U1_WAVE)
        if b == 3:
            return self.w3_poly() - self.U3.derivative().as_phasepoly(_U3_WAVE)
        raise ValueError("b must be 1 or 3")

    def hamiltonian_poly(self) -> PhasePoly:
        h = (
            PhasePoly.momentum(2, 0, 0, Fraction(1, 2))
            + PhasePoly.momentum(0, 2, 0, Fraction(1, 2))
            + PhasePoly.momentum(0, 0, 2, Fraction(1, 2))
        )
        h = h + self.W1_poly() + self.W3_poly()
        for pot, wave in ((self.U1, _U1_WAVE), (self.U2, _U2_WAVE), (self.U3, _U3_WAVE)):
            h = h + pot.as_phasepoly(wave)
        return h

    # -- serialization -----------------------------------------------------

    def to_json_obj(self) -> dict:
        def rat(f: Fraction):
            return [f.numerator, f.denominator]

        return {
            "gamma1": rat(self.gamma1), "gamma3": rat(self.gamma3),
            "T1": rat(self.T1), "T3": rat(self.T3),
            "tau1": rat(self.tau1), "tau3": rat(self.tau3),
            "W1": self.W1.to_json_obj(), "W3": self.W3.to_json_obj(),
            "U1": self.U1.to_json_obj(), "U2": self.U2.to_json_obj(),
            "U3": self.U3.to_json_obj(),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ChainParams":
        known = {"gamma1", "gamma3", "T1", "T3", "tau1", "tau3",
                 "W1", "W3", "U1", "U2", "U3"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {}
        for name in ("gamma1", "gamma3", "T1", "T3", "tau1", "tau3"):
            if name in obj:
                kwargs[name] = _rat(obj[name])
        for name in ("W1", "W3", "U1", "U2", "U3"):
            if name in obj:
                kwargs[name] = TrigPotential.from_json_obj(obj[name])
        return cls(**kwargs)


DEFAULT_PARAMS_DICT = {
    "gamma1": [1, 1], "gamma3": [1, 1],
    "T1": [1, 1], "T3": [1, 1],
    "tau1": [0, 1], "tau3": [0, 1],
    "W1": [[1, [-1, 1], [0, 1]]],
    "W3": [[1, [-1, 1], [0, 1]]],
    "U1": [], "U2": [], "U3": [],
}


@dataclass
class State:
    """A point (q, p) of the phase space; angles live in [0, 2*pi)."""

    q1: float = 0.0
    q2: float = 0.0
    q3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    p3: float = 0.0

    def __post_init__(self):
        self.wrap()

    def wrap(self) -> "State":
        self.q1 %= TWO_PI
        self.q2 %= TWO_PI
        self.q3 %= TWO_PI
        return self

    @property
    def q(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3])

    @property
    def p(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.p3])

    @classmethod
    def from_arrays(cls, q, p) -> "State":
        return cls(q[0], q[1], q[2], p[0], p[1], p[2])

    def copy(self) -> "State":
        return State(self.q1, self.q2, self.q3, self.p1, self.p2, self.p3)


def hamiltonian(x: State, params: ChainParams) -> float:
    """Total energy sum_i (p_i^2/2 + U_i(q_i)) + sum_b W_b(q2 - q_b)."""
    kin = 0.5 * (x.p1 ** 2 + x.p2 ** 2 + x.p3 ** 2)
    pot = (
        params.U1.value(x.q1) + params.U2.value(x.q2) + params.U3.value(x.q3)
        + params.W1.value(x.q2 - x.q1) + params.W3.value(x.q2 - x.q3)
    )
    return kin + pot


def forces(x: State, params: ChainParams) -> tuple[float, float, float]:
    """(phi1, phi2, phi3): the conservative forces on the three momenta."""
    w1 = params.W1.derivative()
    w3 = params.W3.derivative()
    u1 = params.U1.derivative()
    u2 = params.U2.derivative()
    u3 = params.U3.derivative()
    phi1 = w1.value(x.q2 - x.q1) - u1.value(x.q1)
    phi3 = w3.value(x.q2 - x.q3) - u3.value(x.q3)
    phi2 = -w1.value(x.q2 - x.q1) - w3.value(x.q2 - x.q3) - u2.value(x.q2)
    return phi1, phi2, phi3


def sde_drift(x: State, params: ChainParams):
    """Drift of the SDE plus the two diffusion amplitudes sqrt(2 gamma_b T_b).

    Returns ``(dq, dp, amps)`` with dq_i = p_i, dp2 = phi2 and
    dp_b = phi_b + tau_b - gamma_b p_b.
    """
    phi1, phi2, phi3 = forces(x, params)
    dq = (x.p1, x.p2, x.p3)
    dp = (
        phi1 + float(params.tau1) - float(params.gamma1) * x.p1,
        phi2,
        phi3 + float(params.tau3) - float(params.gamma3) * x.p3,
    )
    amps = (
        math.sqrt(2.0 * float(params.gamma1) * float(params.T1)),
        math.sqrt(2.0 * float(params.gamma3) * float(params.T3)),
    )
    return dq, dp, amps


def generator_apply(f: PhasePoly, params: ChainParams) -> PhasePoly:
    """Symbolic action of the full generator L on f, exact."""
    from . import averaging

    return averaging.ito(f, params).drift
