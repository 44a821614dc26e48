"""Command-line interface: ``cddsense simulate | scan | sensitivity | fit | calibrate``.

Every command writes into ``--out`` (default from the config): CSV tables,
JSON reports, PNG figures, the fully resolved configuration
(``resolved.cfg``) and ``run.json`` with the tool version and unit scale.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error,
3 fit failure (trace files are still written), 4 calibration target out of
reach (the achievable range is reported).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (ALPHA_DOUBLE, ALPHA_SINGLE, FitError, fit_damped_rabi, min_field)
from .coherence import CalibrationError, calibrate, fit_trace, simulate_protocol
from .config import ConfigError, RunConfig, resolve_config_path
from .model import TWO_PI, Frame, validate_hierarchy
from .propagate import read_csv, write_csv
from .readout import photon_sample, sigma_curve
from .scan import ScanSpec, project_sensitivity, run_scan

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_FIT, EXIT_CALIBRATION = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p, config_required=True):
    p.add_argument("--config", required=config_required,
                   help="config file, or the name of a bundled config (e.g. fig2b)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry (repeatable)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--trajectories", type=int, help="Monte Carlo trajectories")
    p.add_argument("--threads", type=int, help="worker threads (0: all cores)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="cddsense", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"cddsense {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("simulate", help="propagate one configuration and fit the signal"))
    _common(sub.add_parser("scan", help="one-dimensional parameter scan"))
    _common(sub.add_parser("sensitivity", help="dB_min versus total time, single vs double drive"))
    _common(sub.add_parser("calibrate", help="fit noise amplitudes to a coherence ladder"))
    fp = sub.add_parser("fit", help="fit a damped oscillation to an external CSV trace")
    fp.add_argument("trace", help="CSV with a 't' column")
    fp.add_argument("--column", default="p1", help="column to fit (default p1)")
    fp.add_argument("--fix-p", type=float, help="fix the stretching exponent")
    _common(fp, config_required=False)
    return ap


def load_config(args) -> RunConfig:
    rc = RunConfig() if args.config is None else RunConfig.load(resolve_config_path(args.config))
    rc.override(args.set)
    for flag, key in (("seed", "seed"), ("trajectories", "trajectories"), ("threads", "threads"),
                      ("out", "out")):
        v = getattr(args, flag)
        if v is not None:
            rc.set(key, str(v))
    rc.validate()
    return rc


def _prepare_out(rc: RunConfig, command, extra=None) -> Path:
    out = Path(rc["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(rc.dumps())
    info = {"tool": "cddsense", "version": __version__, "command": command,
            "units": rc.units_record(), "seed": rc["seed"]}
    info.update(extra or {})
    _write_json(out / "run.json", info)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Frame,)):
        return o.name
    return str(o)


def _set_threads(rc):
    n = rc["threads"]
    if n > 0:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _hierarchy(cfg):
    rep = validate_hierarchy(cfg)
    for v in rep.violations:
        print(f"warning: drive hierarchy: {v}", file=sys.stderr)
    return {"ratios": rep.ratios, "ok": rep.ok}


def _expected_rate(cfg) -> float:
    """Visible signal rate in cycles per time unit."""
    return (cfg.g / 4 if cfg.Omega2 > 0 else cfg.g / 2) / TWO_PI


# -- simulate ----------------------------------------------------------------
def cmd_simulate(rc: RunConfig, args) -> int:
    cfg, noise = rc.drive(), rc.noise()
    hier = _hierarchy(cfg)
    out = _prepare_out(rc, "simulate", {"hierarchy": hier})
    n_traj = 1 if noise.is_quiet else rc["trajectories"]
    kind = rc["protocol"]
    tr = simulate_protocol(cfg, noise, kind, rc.internal("t_final"), n_traj, rc["seed"],
                           frame=rc.frame, strobe_every=rc["strobe_every"])
    transfer = 1.0 - tr.mean
    write_csv(out / "trace.csv", {"t": tr.t, "p1": transfer, "p1_err": tr.sem})
    _write_json(out / "trace.json", dict(tr.meta, frame=rc["frame"], readout="transferred population"))

    fm = rc.fluorescence()
    ps = photon_sample(transfer, fm, rc["repetitions"], np.random.SeedSequence([rc["seed"], 1]))
    strobed = cfg.Omega1 > 0 and kind != "ramsey" and not (kind == "drive" and cfg.Omega2 == 0)
    if strobed:
        n = np.rint(tr.t * cfg.Omega1 / TWO_PI).astype(np.int64)
        write_csv(out / "strobe.csv", {"t": tr.t, "N": n, "p1": transfer, **ps.columns()})

    report = {"protocol": kind, "n_traj": n_traj, "expected_frequency": _expected_rate(cfg)
              if kind == "signal" else None}
    try:
        fit = fit_damped_rabi(tr.t, transfer)
    except (FitError, ValueError) as exc:
        report["error"] = str(exc)
        _write_json(out / "fit.json", report)
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    report["fit"] = fit.to_dict()
    if kind == "signal" and report["expected_frequency"]:
        report["frequency_ratio"] = fit.frequency / report["expected_frequency"]
    _write_json(out / "fit.json", report)
    if not args.no_plots:
        from .plotting import plot_trace
        plot_trace(out / "trace.png", tr.t, transfer, tr.sem if n_traj > 1 else None, fit,
                   title=f"{kind} protocol")
    print(f"f = {fit.frequency:.6g}, T2 = {fit.T2:.6g}  ({out})")
    return EXIT_OK


# -- scan ----------------------------------------------------------------------
def _scan_spec(rc: RunConfig) -> ScanSpec:
    axis = rc["scan_axis"]
    values = tuple(TWO_PI * v / rc.scale for v in rc["scan_values"])
    alpha = None if math.isnan(rc["alpha"]) else rc["alpha"]
    proto = None if rc["scan_protocol"] == "auto" else rc["scan_protocol"]
    return ScanSpec(axis, values, rc.drive(), rc.noise(), rc.internal("t_final"), rc["trajectories"],
                    rc["seed"], rc["scan_objective"], proto, (rc["branch1"], rc["branch2"]),
                    rc.fluorescence(), alpha, rc.time_unit_s, rc["gamma"])


def cmd_scan(rc: RunConfig, args) -> int:
    spec = _scan_spec(rc)
    out = _prepare_out(rc, "scan", {"hierarchy": _hierarchy(spec.cfg), "protocol": spec.kind})
    res = run_scan(spec)
    cols = res.columns()
    cols = {"value_input": np.asarray(rc["scan_values"]), **cols}
    write_csv(out / "scan.csv", cols)
    failed = [r for r in res.rows if r["error"]]
    for r in failed:
        print(f"warning: scan point {r['value']:.6g}: {r['error']}", file=sys.stderr)
    summary = {"axis": spec.axis, "objective": spec.objective, "points": len(res.rows),
               "failed": len(failed)}
    ref = None
    if spec.axis == "g":
        ref_res = fit_trace(simulate_protocol(spec.cfg, spec.noise, "drive", spec.t_final,
                                              spec.n_traj, spec.seed), "drive")
        ref_T2 = ref_res.T2 if ref_res.fit is not None else None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            proj = project_sensitivity(res, reference_T2=ref_T2)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        write_csv(out / "sensitivity_projection.csv", proj.columns())
        summary.update(reference_T2=ref_T2, reference_eta=proj.reference_eta)
        ref = proj
    _write_json(out / "scan.json", summary)
    if not args.no_plots:
        from .plotting import plot_scan
        plot_scan(out / "scan.png", np.asarray(rc["scan_values"]), cols["objective"],
                  cols["uncertainty"], xlabel=f"{spec.axis} / 2pi", ylabel=spec.objective)
        if ref is not None and ref.g.size:
            plot_scan(out / "sensitivity_projection.png", ref.g / TWO_PI * rc.scale, ref.eta,
                      reference=ref.reference_eta, xlabel="g / 2pi", ylabel="eta", logy=True)
    print(f"{len(res.rows)} points, {len(failed)} failed  ({out})")
    return EXIT_OK if not failed else EXIT_FIT


# -- sensitivity ---------------------------------------------------------------
def _tau(rc, key, cfg, noise, kind):
    if not math.isnan(rc[key]):
        return rc.internal(key)
    r = fit_trace(simulate_protocol(cfg, noise, kind, rc.internal("t_final"), rc["trajectories"],
                                    rc["seed"]), kind)
    if r.fit is None:
        raise FitError(f"could not determine {key}: {r.error}")
    return r.T2


def cmd_sensitivity(rc: RunConfig, args) -> int:
    double, noise = rc.drive(), rc.noise()
    if double.Omega2 <= 0:
        raise ConfigError("sensitivity compares drives; set Omega2 > 0", key="Omega2")
    single = double.with_(Omega2=0.0, omega_s=double.omega0 + rc["branch1"] * double.Omega1)
    out = _prepare_out(rc, "sensitivity", {"hierarchy": _hierarchy(double)})
    taus = {"single": _tau(rc, "tau_single", single, noise, "signal"),
            "naive": _tau(rc, "tau_naive", single, noise, "drive"),
            "double": _tau(rc, "tau_double", double, noise, "signal")}
    alpha = {"single": ALPHA_SINGLE, "naive": ALPHA_SINGLE, "double": ALPHA_DOUBLE}
    if not math.isnan(rc["alpha"]):
        alpha = dict.fromkeys(alpha, rc["alpha"])
    t0 = rc.internal("sens_t_min")
    if math.isnan(t0):
        t0 = 10 * max(taus.values())
    t = t0 * np.logspace(0, rc["sens_decades"], rc["sens_points"])
    cols = {"t": t, "t_s": t * rc.time_unit_s}
    curves, report = {}, {"tau": taus, "alpha": alpha, "n_ph": {}}
    for i, (name, tau) in enumerate(taus.items()):
        fm = rc.fluorescence(tau)
        report["n_ph"][name] = fm.n_ph
        sc = sigma_curve(fm, tau, t, rc["sens_experiments"], np.random.SeedSequence([rc["seed"], 2, i]))
        dB = min_field(sc.sigma, tau * rc.time_unit_s, alpha[name], fm.C, rc["gamma"])
        dB_theory = min_field(sc.sigma_theory, tau * rc.time_unit_s, alpha[name], fm.C, rc["gamma"])
        cols.update({f"sigma_{name}": sc.sigma, f"dBmin_{name}": dB, f"dBmin_{name}_shot": dB_theory})
        curves[{"single": "single drive", "naive": "single drive, naive tau",
                "double": "double drive"}[name]] = dB
    write_csv(out / "sensitivity.csv", cols)
    _write_json(out / "sensitivity.json", report)
    if not args.no_plots:
        from .plotting import plot_loglog
        plot_loglog(out / "sensitivity.png", cols["t_s"], curves)
    print(f"tau single {taus['single']:.4g}, naive {taus['naive']:.4g}, double {taus['double']:.4g}  ({out})")
    return EXIT_OK


# -- fit -----------------------------------------------------------------------
def cmd_fit(rc: RunConfig, args) -> int:
    try:
        cols = read_csv(args.trace)
    except OSError as exc:
        raise ConfigError(f"cannot read trace: {exc.strerror}", source=args.trace) from None
    if "t" not in cols or args.column not in cols:
        raise ConfigError(f"trace needs columns 't' and {args.column!r}", source=args.trace)
    out = _prepare_out(rc, "fit", {"trace": str(args.trace), "column": args.column})
    t, y = cols["t"], cols[args.column]
    try:
        fit = fit_damped_rabi(t, y, p=args.fix_p)
    except FitError as exc:
        _write_json(out / "fit.json", {"error": str(exc), "best": exc.best, "residual": exc.residual})
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    _write_json(out / "fit.json", {"fit": fit.to_dict()})
    if not args.no_plots:
        from .plotting import plot_trace
        plot_trace(out / "fit.png", t, y, model=fit, ylabel=args.column)
    print(f"f = {fit.frequency:.6g}, T2 = {fit.T2:.6g}  ({out})")
    return EXIT_OK


# -- calibrate -----------------------------------------------------------------
def cmd_calibrate(rc: RunConfig, args) -> int:
    targets = rc.targets()
    missing = [k for k, v in targets.items() if not v > 0]
    if missing:
        raise ConfigError(f"missing calibration targets: {', '.join('target_' + k for k in missing)}")
    cfg = rc.drive().with_(g=0.0)
    out = _prepare_out(rc, "calibrate")
    try:
        rep = calibrate(targets, cfg, n_traj=rc["trajectories"], seed=rc["seed"], base=rc.noise())
    except CalibrationError as exc:
        _write_json(out / "calibration.json", {"error": str(exc), "achievable": exc.achievable})
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    (out / "calibration.json").write_text(rep.to_json() + "\n")
    cal = RunConfig(dict(rc.values))
    n = rep.noise
    cal.values.update(sigma_B=n.deltaB.sigma * rc.scale, sigma_1=n.deltaOmega1.sigma,
                      sigma_2=n.deltaOmega2.sigma, tau_B=n.deltaB.tau_c / rc.scale,
                      tau_1=n.deltaOmega1.tau_c / rc.scale, tau_2=n.deltaOmega2.tau_c / rc.scale)
    (out / "calibrated.cfg").write_text(cal.dumps())
    for k, v in rep.relative_errors().items():
        print(f"{k}: target {rep.targets[k]:.6g}, achieved {rep.achieved[k]:.6g} ({v:+.1%})")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "scan": cmd_scan, "sensitivity": cmd_sensitivity,
            "fit": cmd_fit, "calibrate": cmd_calibrate}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        print("usage: cddsense {simulate,scan,sensitivity,fit,calibrate} --config FILE [options]",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        rc = load_config(args)
        _set_threads(rc)
        return COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FitError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
