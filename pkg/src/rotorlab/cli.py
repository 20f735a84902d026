"""Command-line front end: configuration, experiment orchestration and
stable file outputs for the simulation, averaging, certification and
control modules.

Exit codes: 0 on success or PASS, 1 on a failed check, 2 on usage or
configuration errors.  All randomized subcommands require a seed (flag or
config) and produce byte-identical outputs for identical config + seed.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .averaging import average_p2
from .model import ChainParams, State, DEFAULT_PARAMS_DICT
from .sde import IntegratorSpec, RngSpec, simulate
from . import control as ctl
from . import lyapunov as lyap
from . import observables as obs

__all__ = ["ExperimentConfig", "ConfigError", "main"]


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


_COLUMN_INDEX = {"q1": 0, "q2": 1, "q3": 2, "p1": 3, "p2": 4, "p3": 5}

_SCHEME_ALIASES = {
    "em": "euler_maruyama", "euler_maruyama": "euler_maruyama",
    "split": "strang_splitting", "strang_splitting": "strang_splitting",
}

DEFAULT_CONFIG = {
    "params": copy.deepcopy(DEFAULT_PARAMS_DICT),
    "integrator": {"scheme": "strang_splitting", "h": 1e-3,
                   "total_time": 1000.0, "record_stride": 10},
    "seed": None,
    "initial_state": [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    "histogram": {"lo": -30.0, "hi": 30.0, "n_bins": 400, "column": "p2",
                  "smoothing_width": 2.0},
    "drift": {"omegas": [10.0, 20.0, 40.0], "window": 50.0,
              "n_paths": 1000, "tolerance": 0.25},
    "lyapunov": {"beta": 0.05, "A": 30.0, "k": 2, "R": 30.0, "M": 3000.0,
                 "c4": 3e-4, "n_points": 100000},
    "control": {"from": [0.0] * 6, "to": [0.0, 0.0, 0.0, 0.0, 5.0, 0.0],
                "eps": 0.05, "deltas": [0.4, 0.2, 0.1, 0.05, 0.025]},
}


def _merge(defaults, user, path):
    """Deep-merge user config over defaults, rejecting unknown keys."""
    if not isinstance(user, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and key != "params":
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """Schema-validated experiment description with explicit defaults."""

    raw: dict

    @classmethod
    def load(cls, path: str | None) -> "ExperimentConfig":
        user = {}
        if path is not None:
            try:
                with open(path) as fh:
                    user = json.load(fh)
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        raw = _merge(DEFAULT_CONFIG, user, "")
        cfg = cls(raw)
        cfg.params()          # validate eagerly so errors exit with code 2
        cfg.integrator()
        return cfg

    def params(self) -> ChainParams:
        try:
            return ChainParams.from_json_obj(self.raw["params"])
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"bad model params: {exc}") from exc

    def integrator(self, **overrides) -> IntegratorSpec:
        block = dict(self.raw["integrator"])
        for key, val in overrides.items():
            if val is not None:
                block[key] = val
        scheme = block.get("scheme", "strang_splitting")
        if scheme not in _SCHEME_ALIASES:
            raise ConfigError(f"unknown scheme {scheme!r} (use em or split)")
        block["scheme"] = _SCHEME_ALIASES[scheme]
        try:
            return IntegratorSpec(**block)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad integrator spec: {exc}") from exc

    def rng(self, seed_flag: int | None) -> RngSpec:
        seed = seed_flag if seed_flag is not None else self.raw["seed"]
        if seed is None:
            raise ConfigError("this subcommand is randomized: "
                              "pass --seed or set \"seed\" in the config")
        return RngSpec(int(seed))

    def initial_state(self) -> State:
        vals = self.raw["initial_state"]
        if len(vals) != 6:
            raise ConfigError("initial_state needs 6 values q1,q2,q3,p1,p2,p3")
        return State(*map(float, vals))

    def to_json(self) -> str:
        return json.dumps(self.raw, indent=2, sort_keys=True)


def _write_text(out: str | None, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _parse_state(text: str, flag: str) -> State:
    parts = text.split(",")
    if len(parts) != 6:
        raise ConfigError(f"{flag} needs 6 comma-separated values "
                          "q1,q2,q3,p1,p2,p3")
    try:
        return State(*(float(p) for p in parts))
    except ValueError as exc:
        raise ConfigError(f"{flag}: {exc}") from exc


# ---------------------------------------------------------------- subcommands

def _cmd_average(cfg: ExperimentConfig, args) -> int:
    eff = average_p2(cfg.params())
    report = eff.to_json_obj()
    alpha = eff.alpha()
    report["alpha"] = float(alpha)
    report["alpha_exact"] = str(Fraction(alpha))
    _write_text(args.out, _json_dump(report))
    return 0


def _cmd_simulate(cfg: ExperimentConfig, args) -> int:
    spec = cfg.integrator(scheme=args.scheme, h=args.h, total_time=args.time)
    rec = simulate(cfg.initial_state(), cfg.params(), spec,
                   cfg.rng(args.seed))
    lines = ["t,q1,q2,q3,p1,p2,p3"]
    for t, row in zip(rec.t, rec.states):
        lines.append(",".join(["%.17g" % t] + ["%.17g" % v for v in row]))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_equilibrium_check(cfg: ExperimentConfig, args) -> int:
    T = args.T if args.T is not None else 1.0
    if not T > 0:
        raise ConfigError("--T must be positive")
    pobj = copy.deepcopy(cfg.raw["params"])
    pobj["T1"] = pobj["T3"] = T
    pobj["tau1"] = pobj["tau3"] = 0
    params = ChainParams.from_json_obj(pobj)
    total_time = args.time if args.time is not None else 50000.0
    spec = cfg.integrator(total_time=total_time)
    rec = simulate(cfg.initial_state(), params, spec, cfg.rng(args.seed))
    n0 = int(0.1 * len(rec.t))
    std = math.sqrt(T)
    ok = True
    lines = []
    for i, name in enumerate(("p1", "p2", "p3")):
        ks = obs.ks_statistic(rec.states[n0:, 3 + i], 0.0, std)
        good = ks < 0.01
        ok &= good
        lines.append(f"{name} KS vs Gaussian(0,{T:g}): {ks:.5f} "
                     f"{'PASS' if good else 'FAIL'} (< 0.01)")
    flux = obs.heat_flux(rec, params)
    for name, j, se in (("J1", flux.J1, flux.stderr1),
                        ("J3", flux.J3, flux.stderr3)):
        good = abs(j) < 3.0 * se
        ok &= good
        lines.append(f"{name} = {j:.3e} +- {se:.3e} "
                     f"{'PASS' if good else 'FAIL'} (|J| < 3 SE)")
    lines.append("equilibrium-check: " + ("PASS" if ok else "FAIL"))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0 if ok else 1


def _cmd_drift_scan(cfg: ExperimentConfig, args) -> int:
    block = cfg.raw["drift"]
    params = cfg.params()
    alpha = float(average_p2(params).alpha())
    estimates = obs.conditional_drift(
        params, block["omegas"], float(block["window"]),
        int(block["n_paths"]), cfg.rng(args.seed))
    tol = float(block["tolerance"])
    rows, ok = [], True
    for est in estimates:
        pred = -alpha / est.omega ** 3
        good = abs(est.mean_slope - pred) <= tol * abs(pred)
        ok &= good
        rows.append({"omega": est.omega, "slope": est.mean_slope,
                     "stderr": est.stderr, "predicted": pred,
                     "pass": bool(good)})
    report = {"alpha": alpha, "tolerance": tol, "estimates": rows,
              "result": "PASS" if ok else "FAIL"}
    _write_text(args.out, _json_dump(report))
    return 0 if ok else 1


def _cmd_lyapunov_scan(cfg: ExperimentConfig, args) -> int:
    block = dict(cfg.raw["lyapunov"])
    for flag, key in (("beta", "beta"), ("A", "A"), ("k", "k"), ("R", "R"),
                      ("M", "M"), ("c4", "c4"), ("n", "n_points")):
        val = getattr(args, flag)
        if val is not None:
            block[key] = val
    n_points = int(block.pop("n_points"))
    try:
        lyp = lyap.LyapunovParams(beta=float(block["beta"]),
                                  A=float(block["A"]), k=int(block["k"]),
                                  R=float(block["R"]), M=float(block["M"]),
                                  c4=float(block["c4"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    params = cfg.params()
    eff = average_p2(params)
    gen = cfg.rng(args.seed).generator(0)
    report = lyap.drift_scan(lyp, eff, params, gen, n_points=n_points)
    obj = report.to_json_obj()
    obj["result"] = "PASS" if report.passed else "FAIL"
    _write_text(args.out, _json_dump(obj))
    return 0 if report.passed else 1


def _cmd_control(cfg: ExperimentConfig, args) -> int:
    block = cfg.raw["control"]
    x_i = (_parse_state(args.from_state, "--from") if args.from_state
           else State(*map(float, block["from"])))
    x_f = (_parse_state(args.to_state, "--to") if args.to_state
           else State(*map(float, block["to"])))
    eps = args.eps if args.eps is not None else float(block["eps"])
    if args.delta is not None:
        try:
            deltas = [float(v) for v in args.delta.split(",")]
        except ValueError as exc:
            raise ConfigError(f"--delta: {exc}") from exc
    else:
        deltas = [float(v) for v in block["deltas"]]
    params = cfg.params()
    bounds = ctl.force_bounds(params)
    plan = ctl.plan_middle(x_i.q2, x_i.p2, x_f.q2, x_f.p2, bounds, params)
    try:
        report = ctl.verify_controllability(x_i, x_f, eps, deltas, params)
        converged = True
    except ctl.NotConverging as exc:
        report = {"error": str(exc), "achieved": False}
        converged = False
    obj = {
        "k_minus": bounds.k_minus, "k_plus": bounds.k_plus,
        "k_star": bounds.k_star,
        "plan": {"theta": plan.theta, "delta": plan.delta, "a": plan.a,
                 "segments": [[d, g] for d, g in plan.segments],
                 "total_time": plan.total_time},
        "replay": report,
        "result": "PASS" if converged and report.get("achieved") else "FAIL",
    }
    _write_text(args.out, _json_dump(obj))
    return 0 if obj["result"] == "PASS" else 1


def _run_histogram(cfg: ExperimentConfig, args):
    block = cfg.raw["histogram"]
    col = block["column"]
    if col not in _COLUMN_INDEX:
        raise ConfigError(f"unknown histogram column {col!r}")
    hist = obs.Histogram(float(block["lo"]), float(block["hi"]),
                         int(block["n_bins"]))
    rec = simulate(cfg.initial_state(), cfg.params(), cfg.integrator(),
                   cfg.rng(args.seed))
    n0 = int(obs.BURN_FRAC * len(rec.t))
    hist.record(rec.states[n0:, _COLUMN_INDEX[col]])
    return hist, rec, block


def _cmd_hist(cfg: ExperimentConfig, args) -> int:
    hist, _, block = _run_histogram(cfg, args)
    modes = obs.find_modes(hist, smoothing_width=float(block["smoothing_width"]))
    obj = {
        "column": block["column"],
        "lo": hist.lo, "hi": hist.hi, "n_bins": hist.n_bins,
        "below": hist.below, "above": hist.above, "total": hist.total,
        "counts": hist.counts.tolist(),
        "modes": [{"location": loc, "height": h} for loc, h in modes],
    }
    _write_text(args.out, _json_dump(obj))
    if args.csv is not None:
        dens = hist.density()
        lines = ["center,count,density"]
        for c, n, d in zip(hist.centers, hist.counts, dens):
            lines.append("%.17g,%d,%.17g" % (c, n, d))
        _write_text(args.csv, "\n".join(lines) + "\n")
    return 0


def _cmd_flux(cfg: ExperimentConfig, args) -> int:
    rec = simulate(cfg.initial_state(), cfg.params(), cfg.integrator(),
                   cfg.rng(args.seed))
    flux = obs.heat_flux(rec, cfg.params())
    obj = flux.to_json_obj()
    obj["sum"] = flux.J1 + flux.J3
    _write_text(args.out, _json_dump(obj))
    return 0


_RANDOMIZED = {"simulate", "equilibrium-check", "drift-scan",
               "lyapunov-scan", "hist", "flux"}

_HANDLERS = {
    "average": _cmd_average,
    "simulate": _cmd_simulate,
    "equilibrium-check": _cmd_equilibrium_check,
    "drift-scan": _cmd_drift_scan,
    "lyapunov-scan": _cmd_lyapunov_scan,
    "control": _cmd_control,
    "hist": _cmd_hist,
    "flux": _cmd_flux,
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON file")
    common.add_argument("--seed", type=int,
                        help="master seed (required for randomized commands)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--jobs", type=int, default=1,
                        help="cap on worker-thread parallelism")
    common.add_argument("--print-config", action="store_true",
                        help="print the fully-resolved config and exit")

    parser = argparse.ArgumentParser(
        prog="rotorlab",
        description="Three-rotor chain laboratory: simulation, averaging, "
                    "certification and control.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("average", parents=[common],
                   help="exact effective slow-momentum dynamics")

    p = sub.add_parser("simulate", parents=[common],
                       help="integrate one trajectory to CSV")
    p.add_argument("--h", type=float, help="time step")
    p.add_argument("--time", type=float, help="total time")
    p.add_argument("--scheme", choices=sorted(_SCHEME_ALIASES),
                   help="integration scheme")

    p = sub.add_parser("equilibrium-check", parents=[common],
                       help="Gibbs-marginal and zero-flux check at T1=T3")
    p.add_argument("--T", type=float, help="common bath temperature")
    p.add_argument("--time", type=float, help="total simulated time")

    sub.add_parser("drift-scan", parents=[common],
                   help="measured slow drift vs the effective prediction")

    p = sub.add_parser("lyapunov-scan", parents=[common],
                       help="stratified negativity scan of the certificate")
    p.add_argument("--beta", type=float)
    p.add_argument("--A", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--R", type=float)
    p.add_argument("--M", type=float)
    p.add_argument("--c4", type=float)
    p.add_argument("--n", type=int, help="number of scan points")

    p = sub.add_parser("control", parents=[common],
                       help="plan and replay a middle-rotor steering target")
    p.add_argument("--from", dest="from_state",
                   help='start state "q1,q2,q3,p1,p2,p3"')
    p.add_argument("--to", dest="to_state",
                   help='target state "q1,q2,q3,p1,p2,p3"')
    p.add_argument("--eps", type=float, help="target accuracy")
    p.add_argument("--delta", help="comma-separated bridging budgets")

    p = sub.add_parser("hist", parents=[common],
                       help="histogram + detected modes of one coordinate")
    p.add_argument("--csv", help="also write center,count,density CSV here")

    sub.add_parser("flux", parents=[common],
                   help="time-averaged heat fluxes of a run")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.jobs is not None:
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            if args.jobs > 1:
                import numba
                numba.set_num_threads(
                    min(args.jobs, numba.config.NUMBA_NUM_THREADS))
        cfg = ExperimentConfig.load(args.config)
        if args.print_config:
            sys.stdout.write(cfg.to_json() + "\n")
            return 0
        if args.command in _RANDOMIZED:
            cfg.rng(args.seed)  # fail fast with a usage error if no seed
        return _HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ctl.Unsupported, ctl.Unachievable, ctl.DegenerateForce,
            obs.RegimeViolation, lyap.ParameterRejection) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
