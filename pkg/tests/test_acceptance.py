"""Acceptance gate: the nine primary criteria, one test (and one PASS/FAIL
line) each, at the stated tolerances.

Heavy statistical criteria use frozen seeds; every tolerance below is the
contractual one, not a tuned-down stand-in.
"""

import math
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from rotorlab.averaging import average_p2, dplus, ito
from rotorlab.control import (force_bounds, plan_middle, replay_error,
                              verify_controllability)
from rotorlab.lyapunov import (H_phi_inverse, LyapunovParams, VEvaluator,
                               default_sampler, drift_scan, lv_eval, v_eval)
from rotorlab.model import ChainParams, State, TrigPotential, sde_drift
from rotorlab import observables as obs
from rotorlab.phasepoly import PhasePoly, RationalComplex
from rotorlab.sde import (IntegratorSpec, RngSpec, simulate,
                          small_model_ensemble, small_model_moments)

TWO_PI = 2.0 * math.pi


def _report(n, ok, detail):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, file=sys.stderr, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def default_params():
    return ChainParams()


@pytest.fixture(scope="module")
def default_eff(default_params):
    return average_p2(default_params)


# --------------------------------------------------------------- criterion 1

def test_criterion_1_symbolic_effective_dynamics():
    t0 = time.monotonic()
    checks = []
    cases = [
        (Fraction(1), Fraction(1), Fraction(1)),
        (Fraction(2), Fraction(3), Fraction(2)),
        (Fraction(1, 2), Fraction(5, 3), Fraction(3, 2)),
    ]
    for g1, g3, kappa in cases:
        W = TrigPotential(((1, -kappa, Fraction(0)),))
        params = ChainParams(gamma1=g1, gamma3=g3, W1=W, W3=W)
        eff = average_p2(params)
        # leading drift coefficient -(g1 + g3) kappa^2 / 2, exactly
        expect_alpha = (g1 + g3) * kappa ** 2 / 2
        checks.append(eff.alpha() == expect_alpha)
        # leading diffusion terms W_b / p2^2, coefficient-exact
        pm2 = PhasePoly.momentum(0, -2, 0)
        lead1 = PhasePoly({k: c for k, c in eff.sigma1 if k[1] == -2})
        lead3 = PhasePoly({k: c for k, c in eff.sigma3 if k[1] == -2})
        checks.append(lead1 == pm2 * params.W1_poly())
        checks.append(lead3 == pm2 * params.W3_poly())
        # alpha against numerical quadrature of <W^2>
        msq, _ = quad(lambda s: W.value(s) ** 2, 0.0, TWO_PI,
                      limit=200, epsabs=1e-14, epsrel=1e-14)
        numeric = float(g1 + g3) * msq / TWO_PI
        checks.append(abs(float(eff.alpha()) - numeric) < 1e-10)
    elapsed = time.monotonic() - t0
    checks.append(elapsed < 5.0)
    _report(1, all(checks),
            f"exact leading terms for {len(cases)} parameter sets, "
            f"alpha vs quadrature < 1e-10, {elapsed:.2f} s (< 5 s)")


# --------------------------------------------------------------- criterion 2

def _random_poly(rng):
    n_terms = rng.integers(1, 5)
    terms = {}
    for _ in range(n_terms):
        key = (int(rng.integers(0, 3)), int(rng.integers(-3, 4)),
               int(rng.integers(0, 3)), int(rng.integers(-2, 3)),
               int(rng.integers(-2, 3)), int(rng.integers(-2, 3)))
        terms[key] = RationalComplex(
            Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 7))),
            Fraction(int(rng.integers(-9, 10)), int(rng.integers(1, 7))))
    return PhasePoly(terms)


def test_criterion_2_averaging_operator_suite(default_params, default_eff):
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    p2 = PhasePoly.momentum(0, 1, 0)
    n_inputs = 1000
    ok = True
    for _ in range(n_inputs):
        f = _random_poly(rng)
        qf = f.q_transform()
        ok &= qf.q2_average() == PhasePoly.zero()          # <Qf> = 0
        ok &= dplus(qf) == f - f.q2_average()              # exact inversion
        if not ok:
            break
    # ito(p2 + F) reproduces (a, sigma_b) exactly, several parameter sets
    for params in (default_params,
                   ChainParams(gamma1=Fraction(2), tau3=Fraction(1)),
                   ChainParams(W3=TrigPotential(((1, Fraction(-2),
                                                  Fraction(0)),)))):
        eff = average_p2(params)
        form = ito(p2 + eff.F, params)
        ok &= form.drift == eff.a
        ok &= form.diff1 == eff.sigma1
        ok &= form.diff3 == eff.sigma3
    elapsed = time.monotonic() - t0
    ok &= elapsed < 30.0
    _report(2, ok, f"{n_inputs} random inputs exact, ito consistency on 3 "
                   f"parameter sets, {elapsed:.1f} s (< 30 s)")


# --------------------------------------------------------------- criterion 3

def test_criterion_3_generator_identities():
    ok = True
    for params in (ChainParams(),
                   ChainParams(gamma1=Fraction(2), T3=Fraction(5),
                               tau1=Fraction(-1), tau3=Fraction(3))):
        # LH = sum_b (tau_b p_b + gamma_b (T_b - p_b^2)), exact equality
        lh = ito(params.hamiltonian_poly(), params).drift
        expect = PhasePoly.zero()
        for b, (n1, n3) in ((1, (1, 0)), (3, (0, 1))):
            g = getattr(params, f"gamma{b}")
            T = getattr(params, f"T{b}")
            tau = getattr(params, f"tau{b}")
            expect = expect + PhasePoly.momentum(n1, 0, n3, coeff=tau) \
                + PhasePoly.constant(g * T) \
                - PhasePoly.momentum(2 * n1, 0, 2 * n3, coeff=g)
        ok &= lh == expect

    # L e^{beta H} closed form vs analytic-derivative evaluation, 1e3 states
    params = ChainParams()
    beta = 0.05
    H = params.hamiltonian_poly()
    lh = ito(H, params).drift
    parts = {v: H.partial(v) for v in ("q1", "q2", "q3", "p1", "p2", "p3")}
    parts2 = {v: parts[v].partial(v) for v in ("p1", "p3")}
    g1T1 = float(params.gamma1 * params.T1)
    g3T3 = float(params.gamma3 * params.T3)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        x = State(*rng.uniform(-3, 3, 6))
        ebh = math.exp(beta * H.evaluate(x.q, x.p))
        closed = ebh * (beta * lh.evaluate(x.q, x.p)
                        + beta ** 2 * (g1T1 * x.p1 ** 2 + g3T3 * x.p3 ** 2))
        dq, dp, _ = sde_drift(x, params)
        val = 0.0
        for var, rate in zip(("q1", "q2", "q3", "p1", "p2", "p3"),
                             list(dq) + list(dp)):
            val += rate * beta * parts[var].evaluate(x.q, x.p) * ebh
        for var, gT in (("p1", g1T1), ("p3", g3T3)):
            hp = parts[var].evaluate(x.q, x.p)
            val += gT * beta * (parts2[var].evaluate(x.q, x.p)
                                + beta * hp ** 2) * ebh
        worst = max(worst, abs(closed - val) / max(abs(closed), 1e-300))
    ok &= worst < 1e-10
    _report(3, ok, f"LH identity exact; L e^(beta H) closed form vs analytic, "
                   f"worst rel err {worst:.1e} (< 1e-10) at 1000 states")


# --------------------------------------------------------------- criterion 4

def test_criterion_4_equilibrium_statistics(default_params):
    spec = IntegratorSpec(scheme="strang_splitting", h=1e-3,
                          total_time=1_000_000.0, record_stride=1000)
    rec = simulate(State(), default_params, spec, RngSpec(2026))
    n0 = len(rec.t) // 10
    ks = [obs.ks_statistic(rec.states[n0:, 3 + i], 0.0, 1.0)
          for i in range(3)]
    flux = obs.heat_flux(rec, default_params)
    ok = all(k < 0.01 for k in ks)
    ok &= abs(flux.J1) < 3 * flux.stderr1
    ok &= abs(flux.J3) < 3 * flux.stderr3
    _report(4, ok,
            f"1e6 time units: KS(p1,p2,p3)={ks[0]:.4f},{ks[1]:.4f},"
            f"{ks[2]:.4f} (< 0.01); J1={flux.J1:.2e}+-{flux.stderr1:.0e}, "
            f"J3={flux.J3:.2e}+-{flux.stderr3:.0e} (within 3 SE of 0)")


# --------------------------------------------------------------- criterion 5

def test_criterion_5_drift_scaling_law(default_params, default_eff):
    t0 = time.monotonic()
    alpha = float(default_eff.alpha())
    omegas = [10.0, 20.0, 40.0]
    ests = obs.conditional_drift(default_params, omegas, 50.0, 10_000,
                                 RngSpec(2027))
    ok = True
    details = []
    for est in ests:
        pred = -alpha / est.omega ** 3
        ok &= abs(est.mean_slope - pred) <= 0.25 * abs(pred)
        details.append(f"w={est.omega:g}: {est.mean_slope:.2e} vs "
                       f"{pred:.2e}")
    exponent = np.polyfit(np.log(omegas),
                          np.log([abs(e.mean_slope) for e in ests]), 1)[0]
    ok &= abs(exponent + 3.0) <= 0.3
    elapsed = time.monotonic() - t0
    ok &= elapsed < 600.0
    _report(5, ok, "; ".join(details) + f"; exponent {exponent:.2f} "
            f"(-3 +- 0.3); {elapsed:.0f} s (< 600 s)")


# --------------------------------------------------------------- criterion 6

def test_criterion_6_small_model_oracle():
    omega, gamma, T, kappa, t = 20.0, 1.0, 1.0, 1.0, 5.0
    _, second = small_model_moments(omega, gamma, T, kappa, t)
    _, mc_second, se = small_model_ensemble(omega, gamma, T, kappa, t,
                                            n_paths=100_000, rng=RngSpec(6))
    ok = abs(mc_second - second) < 3 * se
    _report(6, ok, f"second moment {mc_second:.4f} vs exact {second:.4f} "
                   f"(|diff| = {abs(mc_second - second):.4f} < 3 SE = "
                   f"{3 * se:.4f}) over 1e5 paths")


# --------------------------------------------------------------- criterion 7

def test_criterion_7_lyapunov_certificate(default_params, default_eff):
    lyp = LyapunovParams()  # the searched constants
    gen = np.random.default_rng(777)
    report = drift_scan(lyp, default_eff, default_params, gen,
                        n_points=100_000)
    ok = report.passed

    # sandwich bounds on a fresh stratified sample
    ev = VEvaluator(lyp, default_eff, default_params)
    q, p = default_sampler(lyp)(np.random.default_rng(778), 100_000)
    parts = ev.parts(q, p)
    e0 = np.exp(-parts["m"])
    eH = np.exp(parts["h_exp"] - parts["m"])
    lower_ok = np.all(parts["v_scaled"] - e0 - eH
                      >= -1e-12 * parts["v_scaled"])
    log_upper = parts["h_exp"] + np.log1p(p[:, 1] ** 2)
    upper_ok = np.max(parts["log_v"] - log_upper) < math.log(2.0 + 2 * lyp.A)
    ok &= bool(lower_ok and upper_ok)

    # analytic vs finite-difference LV at 1000 states (FD rounding floor
    # ~100 eps V / h^2 is added where the certificate cancels LV below it)
    fd_lyp = LyapunovParams(beta=0.02, A=3.0, k=1, R=2.0, M=50.0, c4=1e-4)
    fd_ev = VEvaluator(fd_lyp, default_eff, default_params)
    rng = np.random.default_rng(779)
    step = 1e-4
    fd_ok = True
    for _ in range(1000):
        x = State(*rng.uniform(-2.5, 2.5, 6))
        if rng.random() < 0.5:
            x.p2 = rng.uniform(6.0, 10.0) * (1 if rng.random() < 0.5 else -1)
        an = lv_eval(x, fd_lyp, default_eff, default_params)
        fd = _fd_lv(fd_ev, default_params, x, step)
        v = v_eval(x, fd_lyp, default_eff, default_params)
        floor = 100.0 * np.finfo(float).eps * max(v, 1.0) / step ** 2
        fd_ok &= abs(an - fd) <= 1e-4 * max(abs(an), abs(fd)) + floor
    ok &= fd_ok

    # unit formula for the inverse integrated rate
    c4 = lyp.c4
    rate_ok = True
    for t in (0.0, 1.0, 1e3, 1e7):
        u = float(H_phi_inverse(t, c4))
        rate_ok &= abs(((2 + math.log(u)) ** 2 - 4) / (2 * c4) - t) \
            <= 1e-8 * max(t, 1.0)
    ok &= rate_ok
    _report(7, ok,
            f"drift scan 1e5 points max margin {report.max_margin_outside:.3f}"
            f" (<= 0); sandwich ok={bool(lower_ok and upper_ok)}; "
            f"FD agreement ok={fd_ok}; rate formula ok={rate_ok}")


def _fd_lv(ev, params, x, step=1e-4):
    dq, dp, _ = sde_drift(x, params)

    def v_at(vals):
        return float(ev.v(np.array(vals[:3])[None, :],
                          np.array(vals[3:])[None, :])[0])

    base = [x.q1, x.q2, x.q3, x.p1, x.p2, x.p3]
    rates = list(dq) + list(dp)
    val = 0.0
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


# --------------------------------------------------------------- criterion 8

def test_criterion_8_controllability(default_params):
    bounds = force_bounds(default_params)
    rng = np.random.default_rng(808)
    worst_landing = 0.0
    gaps, times = [], []
    for _ in range(100):
        q2i, q2f = rng.uniform(0, TWO_PI, 2)
        p2i = rng.uniform(-10.0, 10.0)
        p2f = p2i + rng.uniform(-10.0, 10.0)
        plan = plan_middle(q2i, p2i, q2f, p2f, bounds, default_params)
        q2, p2 = plan.state_at(plan.total_time)
        landing = abs(math.remainder(q2 - q2f, TWO_PI)) + abs(p2 - p2f)
        worst_landing = max(worst_landing, landing)
        gaps.append(abs(p2f - p2i))
        times.append(plan.total_time)
    ok = worst_landing <= 1e-8
    slope = float(np.polyfit(gaps, times, 1)[0])
    ok &= slope <= 1.0 / bounds.k_star * 1.1

    # full replay: delta-convergence to eps = 0.05 on three targets
    deltas = [0.4, 0.2, 0.1, 0.05, 0.025]
    replay_ok = True
    for seed in range(3):
        r = np.random.default_rng(900 + seed)
        x_i = State(*r.uniform(0, TWO_PI, 3), r.uniform(-2, 2),
                    r.uniform(-5, 5), r.uniform(-2, 2))
        x_f = State(*r.uniform(0, TWO_PI, 3), 0.0,
                    x_i.p2 + r.uniform(-10, 10), 0.0)
        rep = verify_controllability(x_i, x_f, 0.05, deltas, default_params)
        replay_ok &= rep["achieved"]
        errs = rep["errors"]
        replay_ok &= all(b <= 1.1 * a + 1e-9
                         for a, b in zip(errs, errs[1:]))
    ok &= replay_ok
    _report(8, ok,
            f"100 plans land within {worst_landing:.1e} (<= 1e-8); T* slope "
            f"{slope:.3f} <= {1.1 / bounds.k_star:.3f}; replay eps=0.05 "
            f"monotone on 3 targets: {replay_ok}")


# --------------------------------------------------------------- criterion 9

def test_criterion_9a_nongaussian_middle_marginal():
    params = ChainParams(T1=Fraction(1), T3=Fraction(10))
    spec = IntegratorSpec(total_time=200_000.0, record_stride=1000)
    rec = simulate(State(), params, spec, RngSpec(42))
    n0 = len(rec.t) // 10
    ks = []
    for i in (0, 2):  # p1, p3
        s = rec.states[n0:, 3 + i]
        ks.append(obs.ks_statistic(s, float(s.mean()), float(s.std())))
    ek, se = rec.moments.excess_kurtosis(1)
    ok = all(k < 0.02 for k in ks) and abs(ek) > 5 * se
    _report("9a", ok,
            f"KS(p1)={ks[0]:.4f}, KS(p3)={ks[1]:.4f} (< 0.02); p2 excess "
            f"kurtosis {ek:.3f} +- {se:.3f} ({abs(ek) / se:.0f} SE from 0)")


def test_criterion_9b_bimodal_switching():
    params = ChainParams(T1=Fraction(10), T3=Fraction(15), tau3=Fraction(20))
    spec = IntegratorSpec(total_time=3_000_000.0, record_stride=1000)
    rec = simulate(State(), params, spec, RngSpec(43))
    n0 = len(rec.t) // 10
    p2 = rec.states[n0:, 4]
    hist = obs.Histogram(-15.0, 35.0, 400)
    hist.record(p2)
    modes = obs.find_modes(hist)
    locs = sorted(m[0] for m in modes)
    ok = len(modes) == 2
    ok &= abs(locs[0] - 0.0) <= 1.5 and abs(locs[1] - 20.0) <= 1.5
    p1_mean = rec.moments.mean(0)
    p3_mean = rec.moments.mean(2)
    ok &= abs(p1_mean) <= 0.5 and abs(p3_mean - 20.0) <= 0.5
    dw = obs.dwell_times(rec.t[n0:], p2,
                         obs.hysteresis_thresholds(locs[0], locs[1]))
    ok &= dw.mean_dwell_hi < dw.mean_dwell_lo
    ok &= dw.n_dwells_lo >= 3 and dw.n_dwells_hi >= 3
    _report("9b", ok,
            f"modes at {locs[0]:.2f}, {locs[1]:.2f} (within 1.5 of 0, 20); "
            f"<p1>={p1_mean:.3f}, <p3>={p3_mean:.3f}; mean dwell near 20 = "
            f"{dw.mean_dwell_hi:.0f} < near 0 = {dw.mean_dwell_lo:.0f} "
            f"({dw.n_dwells_hi}/{dw.n_dwells_lo} dwells)")
