"""Symbolic averaging of the middle-rotor dynamics.

The stochastic differential of any phase-space function splits into a fast
transport part (raising the power of p2), a bath part (degree-neutral) and
a slow part (lowering the degree).  Iteratively removing oscillatory terms
with the transport inverse, and absorbing averaged terms that are exact
outer transports, turns  d p2 = phi2 dt  into an effective slow SDE

    d(p2 + F) = a dt + sum_b sqrt(2 gamma_b T_b) sigma_b dB^b

whose leading drift is -alpha / p2^3 with alpha = sum_b gamma_b <W_b^2>,
and whose leading diffusions are W_b / p2^2 (channel prefactors
sqrt(2 gamma_b T_b) are kept out of the polynomials so every coefficient
stays rational).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .model import ChainParams
from .phasepoly import PhasePoly, RationalComplex

__all__ = [
    "ItoForm", "EffectiveDynamics", "NotDivisible", "NonTermination",
    "dplus", "dminus", "dzero", "ito", "averaging_step", "outer_absorb",
    "average_p2",
]

_I = RationalComplex(0, 1)


class NotDivisible(ValueError):
    """An averaged mode is not an exact outer transport; reports the mode."""


class NonTermination(RuntimeError):
    """The averaging loop exceeded its pass budget; carries a diagnostic dump."""


@dataclass(frozen=True)
class ItoForm:
    """Ito decomposition of d f: drift plus one diffusion poly per channel.

    Diffusion polynomials are stored without the sqrt(2 gamma_b T_b)
    channel prefactor.
    """

    drift: PhasePoly
    diff1: PhasePoly
    diff3: PhasePoly

    @classmethod
    def zero(cls) -> "ItoForm":
        z = PhasePoly.zero()
        return cls(z, z, z)

    def __add__(self, other: "ItoForm") -> "ItoForm":
        return ItoForm(self.drift + other.drift,
                       self.diff1 + other.diff1,
                       self.diff3 + other.diff3)

    def __neg__(self) -> "ItoForm":
        return ItoForm(-self.drift, -self.diff1, -self.diff3)


def dplus(f: PhasePoly) -> PhasePoly:
    """Fast transport part: p2 * df/dq2."""
    return PhasePoly.momentum(0, 1, 0) * f.partial("q2")


def dminus(f: PhasePoly, params: ChainParams) -> PhasePoly:
    """Slow part: phi2 * df/dp2 (lowers the degree by one)."""
    return params.phi2_poly() * f.partial("p2")


def dzero(f: PhasePoly, params: ChainParams) -> ItoForm:
    """Bath part: outer transport, forcing, friction, and bath curvature."""
    p1 = PhasePoly.momentum(1, 0, 0)
    p3 = PhasePoly.momentum(0, 0, 1)
    drift = (
        p1 * f.partial("q1") + p3 * f.partial("q3")
        + (params.phi_b_poly(1) + PhasePoly.constant(params.tau1)
           - p1.scale(params.gamma1)) * f.partial("p1")
        + (params.phi_b_poly(3) + PhasePoly.constant(params.tau3)
           - p3.scale(params.gamma3)) * f.partial("p3")
        + f.partial("p1").partial("p1").scale(params.gamma1 * params.T1)
        + f.partial("p3").partial("p3").scale(params.gamma3 * params.T3)
    )
    return ItoForm(drift, f.partial("p1"), f.partial("p3"))


def ito(f: PhasePoly, params: ChainParams) -> ItoForm:
    """Full Ito form of d f(X_t): d+ f + d0 f + d- f."""
    z = dzero(f, params)
    return ItoForm(dplus(f) + z.drift + dminus(f, params), z.diff1, z.diff3)


def averaging_step(f: PhasePoly, params: ChainParams):
    """One application of the averaging lemma.

    Returns ``(mean, correction, extra)`` realizing

        f dt = <f> dt - d0(Qf) - d-(Qf) + d(Qf)

    where ``correction = Qf`` is absorbed into the change of variable and
    ``extra`` is the Ito form of -d0(Qf) - d-(Qf).
    """
    mean = f.q2_average()
    qf = f.q_transform()
    z = dzero(qf, params)
    extra = ItoForm(-(z.drift + dminus(qf, params)), -z.diff1, -z.diff3)
    return mean, qf, extra


def _divide_by_transport(coeffs: dict, k1: int, k3: int):
    """Solve  i (k1 p1 + k3 p3) * psi = g  for one Fourier mode.

    ``coeffs`` maps (n1, n3) -> RationalComplex for g; returns the same
    mapping for psi or raises NotDivisible.
    """
    rem = {k: v for k, v in coeffs.items() if not v.is_zero()}
    quo: dict[tuple[int, int], RationalComplex] = {}
    lead = 0 if k1 != 0 else 1  # divide along p1 if possible, else p3
    klead = k1 if k1 != 0 else k3
    kother = k3 if k1 != 0 else k1
    while rem:
        n = max(key[lead] for key in rem)
        if n == 0:
            raise NotDivisible(
                f"mode (k1={k1}, k3={k3}) has residual terms {sorted(rem)} "
                "not divisible by the transport symbol"
            )
        for key in [k for k in rem if k[lead] == n]:
            c = rem.pop(key) / (_I * klead)
            qkey = (key[0] - 1, key[1]) if lead == 0 else (key[0], key[1] - 1)
            acc = quo.get(qkey)
            quo[qkey] = c if acc is None else acc + c
            if kother != 0:
                # subtract the cross term i*kother*p_other * c
                okey = (qkey[0], qkey[1] + 1) if lead == 0 else (qkey[0] + 1, qkey[1])
                cross = c * _I * kother
                old = rem.get(okey, RationalComplex())
                new = old - cross
                if new.is_zero():
                    rem.pop(okey, None)
                else:
                    rem[okey] = new
    return {k: v for k, v in quo.items() if not v.is_zero()}


def outer_absorb(g: PhasePoly, params: ChainParams):
    """Absorb averaged drift that is an exact outer transport.

    ``g`` must be q2-independent.  Splits g into a genuine part (wave
    (0, 0), cannot be transported away) and an absorbable part for which a
    q2-independent Psi with  sum_b p_b dPsi/dq_b = g_abs  is found by
    per-mode polynomial division.  Returns ``(psi, genuine, remainder)``
    where the change of variable gains -psi and ``remainder`` is the Ito
    form of the non-transport corrections -(d0 Psi - transport) - d- Psi.
    """
    genuine_terms = {}
    modes: dict[tuple[int, int, int], dict] = {}
    for (n1, l, n3, k1, k2, k3), c in g:
        if k2 != 0:
            raise ValueError("outer_absorb requires a q2-independent input")
        if k1 == 0 and k3 == 0:
            genuine_terms[(n1, l, n3, k1, k2, k3)] = c
        else:
            modes.setdefault((l, k1, k3), {})[(n1, n3)] = c
    genuine = PhasePoly(genuine_terms)

    psi_terms = {}
    for (l, k1, k3), coeffs in modes.items():
        quo = _divide_by_transport(coeffs, k1, k3)
        for (n1, n3), c in quo.items():
            psi_terms[(n1, l, n3, k1, 0, k3)] = c
    psi = PhasePoly(psi_terms)
    if psi.is_zero():
        return psi, genuine, ItoForm.zero()

    p1 = PhasePoly.momentum(1, 0, 0)
    p3 = PhasePoly.momentum(0, 0, 1)
    transport = p1 * psi.partial("q1") + p3 * psi.partial("q3")
    z = dzero(psi, params)
    remainder = ItoForm(
        -(z.drift - transport) - dminus(psi, params),
        -z.diff1,
        -z.diff3,
    )
    return psi, genuine, remainder


@dataclass(frozen=True)
class EffectiveDynamics:
    """Output of the averaging pipeline for p2.

    ``F`` is the change-of-variable correction (leading term Phi2/p2);
    ``a`` the drift and ``sigma1``, ``sigma3`` the diffusions of
    p2 + F, with channel prefactors factored out.
    """

    F: PhasePoly
    a: PhasePoly
    sigma1: PhasePoly
    sigma3: PhasePoly
    residual_drift_degree: int
    residual_diff_degree: int

    def alpha(self) -> Fraction:
        """Coefficient alpha in the leading drift -alpha / p2^3."""
        c = self.a.coefficient((0, -3, 0, 0, 0, 0))
        if c.im != 0:
            raise AssertionError("leading drift coefficient is not real")
        return -c.re

    def to_json_obj(self) -> dict:
        alpha = self.alpha()
        return {
            "alpha": [alpha.numerator, alpha.denominator],
            "F": self.F.to_json_obj(),
            "a": self.a.to_json_obj(),
            "sigma1": self.sigma1.to_json_obj(),
            "sigma3": self.sigma3.to_json_obj(),
            "residual_drift_degree": self.residual_drift_degree,
            "residual_diff_degree": self.residual_diff_degree,
        }


def _select(poly: PhasePoly, pred) -> PhasePoly:
    return PhasePoly({k: c for k, c in poly if pred(k)})


def average_p2(params: ChainParams, target_degree: int = -4,
               max_passes: int = 20, verify: bool = True) -> EffectiveDynamics:
    """Iterate the averaging lemma on  d p2 = phi2 dt  down to target_degree.

    Oscillatory drift terms of degree above ``target_degree`` are removed
    with the transport inverse; averaged terms with outer Fourier content
    are absorbed as exact outer transports.  What remains is the genuine
    averaged drift (leading term -alpha/p2^3) plus residuals of degree at
    most ``target_degree``.
    """
    if target_degree > -4:
        raise ValueError("target_degree must be <= -4 to isolate the leading drift")
    F = PhasePoly.zero()
    drift = params.phi2_poly()
    diff1 = PhasePoly.zero()
    diff3 = PhasePoly.zero()

    for _ in range(max_passes):
        osc = _select(drift, lambda k: k[4] != 0 and k[1] > target_degree)
        if not osc.is_zero():
            mean, correction, extra = averaging_step(osc, params)
            assert mean.is_zero()
            deg = osc.degree()
            for part, drop in ((extra.drift, 1), (extra.diff1, 1), (extra.diff3, 1)):
                d = part.degree()
                assert d is None or d <= deg - drop + 1  # degree bookkeeping monitor
            drift = drift - osc + extra.drift
            diff1 = diff1 + extra.diff1
            diff3 = diff3 + extra.diff3
            F = F - correction
            continue
        absorbable = _select(
            drift,
            lambda k: k[4] == 0 and (k[3] != 0 or k[5] != 0) and k[1] > target_degree,
        )
        if not absorbable.is_zero():
            psi, genuine, remainder = outer_absorb(absorbable, params)
            assert genuine.is_zero()
            drift = drift - absorbable + remainder.drift
            diff1 = diff1 + remainder.diff1
            diff3 = diff3 + remainder.diff3
            F = F - psi
            continue
        break
    else:
        raise NonTermination(
            "averaging did not settle within "
            f"{max_passes} passes; outstanding drift: {drift!r}"
        )

    # averaged genuine content of degree -2 must never appear (its q2-average
    # vanishes identically for trig-polynomial potentials)
    deg2 = _select(drift, lambda k: k[4] == 0 and k[3] == 0 and k[5] == 0 and k[1] == -2)
    if not deg2.is_zero():
        raise AssertionError(f"unexpected degree -2 averaged drift: {deg2!r}")

    if verify:
        p2 = PhasePoly.momentum(0, 1, 0)
        check = ito(p2 + F, params)
        if check.drift != drift or check.diff1 != diff1 or check.diff3 != diff3:
            raise AssertionError("pipeline bookkeeping deviates from direct Ito form")

    lead_key = (0, -3, 0, 0, 0, 0)
    resid_drift = _select(drift, lambda k: k != lead_key)
    resid_diff = (_select(diff1, lambda k: k[1] != -2)
                  + _select(diff3, lambda k: k[1] != -2))
    rdd = resid_drift.degree()
    rsd = resid_diff.degree()
    return EffectiveDynamics(
        F=F,
        a=drift,
        sigma1=diff1,
        sigma3=diff3,
        residual_drift_degree=rdd if rdd is not None else target_degree,
        residual_diff_degree=rsd if rsd is not None else target_degree,
    )
