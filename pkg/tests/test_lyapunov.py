"""Stability certificate: cutoff algebra, generator identities, scans."""

import math

import numpy as np
import pytest

from rotorlab.averaging import average_p2, ito
from rotorlab.lyapunov import (H_phi_inverse, LyapunovParams, ScanReport,
                               VEvaluator, chi, chi_d1, chi_d2, default_sampler,
                               drift_scan, lv_eval, p2_tilde, phi, region,
                               v_eval)
from rotorlab.model import ChainParams, State, sde_drift
from rotorlab.phasepoly import PhasePoly


@pytest.fixture(scope="module")
def eff():
    return average_p2(ChainParams())


@pytest.fixture(scope="module")
def params():
    return ChainParams()


def test_parameter_validation():
    with pytest.raises(ValueError):
        LyapunovParams(beta=0.0)
    with pytest.raises(ValueError):
        LyapunovParams(k=0)
    with pytest.raises(ValueError):
        LyapunovParams(A=-1.0)
    LyapunovParams()  # defaults are valid


# ------------------------------------------------------------------- cutoff

def test_chi_plateaus():
    s = np.array([-0.5, 0.0, 0.99, 1.0, 2.0, 2.5, -3.0])
    assert np.allclose(chi(s), [0, 0, 0, 0, 1, 1, 1])
    assert 0.0 < chi(np.array([1.5]))[0] < 1.0


def test_chi_derivatives_match_finite_differences():
    s = np.linspace(-2.5, 2.5, 101)
    h = 1e-6
    fd1 = (chi(s + h) - chi(s - h)) / (2 * h)
    assert np.allclose(chi_d1(s), fd1, atol=1e-6)
    h = 1e-5  # second differences need a larger step for rounding noise
    fd2 = (chi(s + h) - 2 * chi(s) + chi(s - h)) / h ** 2
    assert np.allclose(chi_d2(s), fd2, atol=1e-3)


def test_region_classification():
    lyp = LyapunovParams(R=2.0, k=1, M=10.0)
    # D = p1^2 + p3^2 + R
    assert region(State(p2=1.0), lyp).name == "omega1"
    assert region(State(p2=3.0), lyp).name == "omega2"
    assert region(State(p2=10.0), lyp).name == "omega3"
    assert not region(State(p2=10.0), lyp).in_K       # fast spin is outside K
    assert region(State(p2=1.0), lyp).in_K
    assert not region(State(p2=1.0, p1=5.0), lyp).in_K  # S > M


def test_p2_tilde_leading_correction(eff, params):
    x = State(0.7, 1.9, 0.4, 0.6, 12.0, -0.2)
    lead = x.p2 + params.Phi2_poly().evaluate(x.q, x.p) / x.p2
    assert p2_tilde(x, eff, truncation_degree=-1) == pytest.approx(lead,
                                                                   rel=1e-12)
    # the full correction differs at O(p2^-2)
    full = p2_tilde(x, eff, truncation_degree=None)
    assert full != pytest.approx(lead, abs=1e-8)
    assert abs(full - lead) < 5.0 / x.p2 ** 2


# ------------------------------------------------------------ rate function

def test_phi_increasing_concave():
    c4 = 3e-4
    s = np.linspace(1.0, 1e6, 20001)
    vals = phi(s, c4)
    d = np.diff(vals)
    assert np.all(d > 0)          # increasing
    assert np.all(np.diff(d) <= 1e-15)  # concave


def test_h_phi_inverse_formula():
    """H_phi(u) = ((2 + log u)^2 - 4) / (2 c4) is inverted exactly."""
    c4 = 3e-4
    for t in (0.0, 1.0, 10.0, 1e4, 1e8):
        u = float(H_phi_inverse(t, c4))
        back = ((2.0 + math.log(u)) ** 2 - 4.0) / (2.0 * c4)
        assert back == pytest.approx(t, rel=1e-10, abs=1e-8)
    assert H_phi_inverse(0.0, c4) == pytest.approx(1.0)


# --------------------------------------------------- generator closed forms

def test_exp_beta_h_generator_closed_form(params):
    """L e^{beta H} = e^{beta H} (beta LH + beta^2 sum_b 2 gamma T p_b^2 / 2)
    against analytic differentiation of e^{beta H}."""
    beta = 0.05
    H = params.hamiltonian_poly()
    lh = ito(H, params).drift
    g1T1 = float(params.gamma1) * float(params.T1)
    g3T3 = float(params.gamma3) * float(params.T3)
    rng = np.random.default_rng(17)
    for _ in range(100):
        x = State(*rng.uniform(-3, 3, 6))
        ebh = math.exp(beta * H.evaluate(x.q, x.p))
        closed = ebh * (beta * lh.evaluate(x.q, x.p)
                        + beta ** 2 * (g1T1 * x.p1 ** 2 + g3T3 * x.p3 ** 2))
        # analytic derivatives of e^{beta H}: first order via exact partials
        # of H, second order via beta (H_pp + beta H_p^2)
        dq, dp, _ = sde_drift(x, params)
        val = 0.0
        for var, rate in zip(("q1", "q2", "q3", "p1", "p2", "p3"),
                             list(dq) + list(dp)):
            val += rate * beta * H.partial(var).evaluate(x.q, x.p) * ebh
        for b, var, gT in ((1, "p1", g1T1), (3, "p3", g3T3)):
            hp = H.partial(var).evaluate(x.q, x.p)
            hpp = H.partial(var).partial(var).evaluate(x.q, x.p)
            val += gT * beta * (hpp + beta * hp ** 2) * ebh
        assert closed == pytest.approx(val, rel=1e-10)


def _fd_lv(ev: VEvaluator, params: ChainParams, x: State, step=1e-4):
    """LV by central finite differences of V."""
    dq, dp, _ = sde_drift(x, params)

    def v_at(vals):
        q = np.array(vals[:3])[None, :]
        p = np.array(vals[3:])[None, :]
        return float(ev.v(q, p)[0])

    base = [x.q1, x.q2, x.q3, x.p1, x.p2, x.p3]
    val = 0.0
    rates = list(dq) + list(dp)
    for i in range(6):
        hi = step * max(1.0, abs(base[i]))
        up, dn = list(base), list(base)
        up[i] += hi
        dn[i] -= hi
        val += rates[i] * (v_at(up) - v_at(dn)) / (2 * hi)
    for b, i in ((1, 3), (3, 5)):
        gT = float(getattr(params, f"gamma{b}")) * float(
            getattr(params, f"T{b}"))
        hi = step * max(1.0, abs(base[i]))
        up, dn = list(base), list(base)
        up[i] += hi
        dn[i] -= hi
        val += gT * (v_at(up) - 2 * v_at(base) + v_at(dn)) / hi ** 2
    return val


def _assert_lv_fd_agreement(an, fd, v, step=1e-4):
    """1e-4 relative agreement, with an additive floor for the intrinsic
    rounding error ~ 100 eps V / h^2 of the finite-difference second
    differences (binding where the certificate makes |LV| << V)."""
    floor = 100.0 * np.finfo(float).eps * max(v, 1.0) / step ** 2
    assert abs(an - fd) <= 1e-4 * max(abs(an), abs(fd)) + floor


def test_lv_matches_finite_differences(eff, params):
    lyp = LyapunovParams(beta=0.02, A=3.0, k=1, R=2.0, M=50.0, c4=1e-4)
    ev = VEvaluator(lyp, eff, params)
    rng = np.random.default_rng(23)
    checked = 0
    for _ in range(60):
        x = State(*rng.uniform(-2.5, 2.5, 6))
        if rng.random() < 0.5:  # half the states in the active cutoff zone
            x.p2 = rng.uniform(6.0, 10.0) * rng.choice([-1.0, 1.0])
        an = lv_eval(x, lyp, eff, params)
        fd = _fd_lv(ev, params, x)
        v = v_eval(x, lyp, eff, params)
        _assert_lv_fd_agreement(an, fd, v)
        checked += 1
    assert checked == 60


# ----------------------------------------------------------------- sandwich

def test_sandwich_bounds(eff, params):
    lyp = LyapunovParams()
    ev = VEvaluator(lyp, eff, params)
    gen = np.random.default_rng(29)
    q, p = default_sampler(lyp)(gen, 20000)
    parts = ev.parts(q, p)
    e0 = np.exp(-parts["m"])
    eH = np.exp(parts["h_exp"] - parts["m"])
    # lower bound: V >= 1 + e^{beta H} (the cutoff term is nonnegative)
    assert np.all(parts["v_scaled"] - e0 - eH >= -1e-12 * parts["v_scaled"])
    # upper bound: V <= c2 (1 + p2^2) e^{beta H} with a uniform constant
    log_upper = parts["h_exp"] + np.log1p(p[:, 1] ** 2)
    log_ratio = parts["log_v"] - log_upper
    c2 = 2.0 + 2.0 * lyp.A
    assert np.max(log_ratio) < math.log(c2)


# --------------------------------------------------------------- drift scan

def test_drift_scan_defaults_pass(eff, params):
    report = drift_scan(LyapunovParams(), eff, params,
                        np.random.default_rng(101), n_points=5000)
    assert isinstance(report, ScanReport)
    assert report.passed
    assert report.max_margin_outside < 0
    assert report.n_outside > 0
    obj = report.to_json_obj()
    assert obj["pass"] is True


def test_drift_scan_rejects_bad_constants(eff, params):
    # a huge rate multiplier c4 demands more decay than V supplies
    bad = LyapunovParams(c4=1e3)
    report = drift_scan(bad, eff, params, np.random.default_rng(102),
                        n_points=2000)
    assert not report.passed
    from rotorlab.lyapunov import ParameterRejection
    with pytest.raises(ParameterRejection):
        drift_scan(bad, eff, params, np.random.default_rng(102),
                   n_points=2000, strict=True)


def test_v_is_at_least_one(eff, params):
    lyp = LyapunovParams()
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = State(*rng.uniform(-5, 5, 6))
        assert v_eval(x, lyp, eff, params) >= 1.0
