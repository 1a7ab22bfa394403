"""Command-line front end.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, RunConfig
from .core import gaussian_cdf, ks_distance, neff_distribution
from .counting import g2_estimate, segment_variance_to_mean, variance_to_mean
from .fidelity import TABLE1, FidelityCurve, optimal_time, table_row_values
from .formats import (FormatError, RunManifest, read_counts, to_jsonable, write_counts,
                      write_curve, write_json)
from .quantum import (DimensionError, SteadyStateError, SystemSpec, excited_population,
                      field_amplitude, field_g2_zero, output_g2_zero, photon_number,
                      reflected_flux, steady_state)
from .signal import DriveConfig, intracavity_amplitude, reflection_rate
from .transit import (FitError, mean_neff_timeline, predicted_variance_to_mean,
                      simulate_counts)
from .zeeman import (DrivePolarization, LevelScheme, cooperativity_ratio,
                     equilibrium_populations, sigma_fraction)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_curve(out: Path, stem: str, fmt: str, x, y, yerr=None) -> Path:
    if fmt == "json":
        return write_json(out / f"{stem}.json", {"x": x, "y": y, "yerr": yerr if yerr is not None
                                                 else np.zeros_like(np.asarray(y, dtype=float))})
    return write_curve(out / f"{stem}.csv", x, y, yerr)


def _config(args) -> RunConfig:
    return RunConfig.load(args.config, args.preset).with_seed(args.seed)


def cmd_neff(args) -> dict:
    cfg = _config(args)
    sec = cfg.require("neff")
    mean = float(sec.get("mean", 1.0))
    kind = sec.get("kind", "monte_carlo_empirical")
    dist = neff_distribution(mean, kind, n_points=int(sec.get("n_points", 512)),
                             n_samples=int(sec.get("n_samples", 200_000)), params=cfg.params(),
                             seed=cfg.seed, n_workers=int(sec.get("n_workers", 1)))
    moments = dist.moments()
    summary = {"kind": dist.kind.value, "mean_neff": moments["mean"], "variance": moments["variance"],
               "var_over_mean": moments["var_over_mean"], "requested_mean": mean}
    if dist.samples is not None:
        n = dist.samples.size
        summary["n_samples"] = n
        summary["mean_stderr"] = float(dist.samples.std(ddof=1) / np.sqrt(n))
        summary["ks_vs_gaussian"] = ks_distance(dist.samples, lambda x: gaussian_cdf(x, mean))
    out = _out_dir(args)
    manifest = RunManifest.start("neff", __version__, cfg.seed, cfg.data)
    manifest.add(_write_curve(out, "neff_density", args.format, dist.grid, dist.density))
    manifest.add(write_json(out / "neff_moments.json", summary))
    manifest.finish(out)
    return summary


def cmd_simulate(args) -> dict:
    cfg = _config(args)
    plan = cfg.plan()
    profile = cfg.cloud()
    stream = simulate_counts(plan, profile)
    out = _out_dir(args)
    manifest = RunManifest.start("simulate", __version__, cfg.seed, cfg.data)
    manifest.add(write_counts(out / "counts.csv", stream))
    timeline = mean_neff_timeline(profile, plan.bin_centres, plan.mode)
    manifest.add(_write_curve(out, "mean_neff", args.format, plan.bin_centres, timeline))
    manifest.finish(out)
    return {"n_trials": stream.n_trials, "n_bins": stream.n_bins, "bin_width_us": plan.bin_width,
            "mean_count_per_bin": float(stream.counts.mean()), "checksums": manifest.checksums()}


def _fidelity_report(rates, max_k: int, out: Path, fmt: str, manifest: RunManifest) -> dict:
    report = {}
    for k in range(1, max_k + 1):
        t_opt, f_opt = optimal_time(rates, k)
        report[f"F{k}max"] = f_opt
        report[f"T{k}max_us"] = t_opt
        curve = FidelityCurve.compute(rates, k)
        manifest.add(_write_curve(out, f"fidelity_K{k}", fmt, curve.times_us, curve.values))
    return report


def cmd_analyze(args) -> dict:
    cfg = RunConfig.load(args.config, args.preset) if (args.config or args.preset) else None
    analysis = cfg.section("analysis") if cfg else {}
    out = _out_dir(args)
    manifest = RunManifest.start("analyze", __version__, cfg.seed if cfg else 0,
                                 cfg.data if cfg else {})
    summary: dict = {"inputs": [str(p) for p in args.counts]}
    for path in args.counts:
        stream = read_counts(path)
        stem = Path(path).stem
        max_lag = min(int(analysis.get("max_lag_bins", 30)), stream.n_bins - 1)
        g2 = g2_estimate(stream, max_lag)
        manifest.add(_write_curve(out, f"{stem}_g2", args.format, g2.tau_us, g2.g2, g2.stderr))
        entry = {"n_trials": stream.n_trials, "n_bins": stream.n_bins, "bin_width_us": stream.bin_width,
                 "g2_zero": float(g2.g2[0]), "g2_one_bin": float(g2.g2[min(1, max_lag)])}
        if stream.n_trials >= 3:
            vm = variance_to_mean(stream, analysis.get("window_us"))
            manifest.add(_write_curve(out, f"{stem}_variance", args.format, vm.t_us, vm.ratio, vm.stderr))
            lo = analysis.get("segment_start_us")
            hi = analysis.get("segment_stop_us")
            seg = stream.segment(lo if lo is not None else stream.t0,
                                 hi if hi is not None else stream.times[-1] + stream.bin_width)
            if seg.n_bins:
                value, err = segment_variance_to_mean(seg, pooled=False)
                entry["segment_var_over_mean"] = value
                entry["segment_var_over_mean_stderr"] = err
                if cfg is not None and "experiment" in cfg.data and "cloud" in cfg.data:
                    plan = cfg.plan()
                    means = mean_neff_timeline(cfg.cloud(), seg.times + 0.5 * seg.bin_width, plan.mode)
                    pred = [predicted_variance_to_mean(plan, m)
                            for m in np.linspace(means.min(), means.max(), 9)]
                    grid = np.linspace(means.min(), means.max(), 9)
                    entry["segment_prediction"] = float(np.mean(np.interp(means, grid, pred))
                                                        if means.max() > means.min() else pred[0])
        summary[stem] = entry
    fid = analysis.get("fidelity")
    if fid:
        summary["fidelity"] = _fidelity_report(cfg.detector_rates(), int(fid.get("max_k", 2)),
                                               out, args.format, manifest)
    manifest.add(write_json(out / "analysis.json", summary))
    manifest.finish(out)
    return summary


def _render_table(rows: list) -> str:
    head = f"{'row':<26}{'S1/ms':>8}{'B/ms':>8}{'F1max %':>11}{'T1max us':>10}{'F2max %':>11}"
    lines = [head, "-" * len(head)]
    for r, row in zip(rows, TABLE1):
        d1, dt, d2 = row.digits
        lines.append(f"{r['label']:<26}{r['S1_per_ms']:>8g}{r['B_per_ms']:>8g}"
                     f"{100 * r['F1max']:>11.{d1}f}{r['T1max_us']:>10.{dt}f}{100 * r['F2max']:>11.{d2}f}")
    return "\n".join(lines)


def cmd_table1(args) -> dict:
    rows = [table_row_values(r) for r in TABLE1]
    out = _out_dir(args)
    manifest = RunManifest.start("table1", __version__, 0, {})
    if args.format == "json":
        manifest.add(write_json(out / "table1.json", rows))
    else:
        path = out / "table1.csv"
        keys = ["label", "S1_per_ms", "B_per_ms", "F1max", "T1max_us", "F2max"]
        with path.open("w") as fh:
            fh.write(",".join(keys) + "\n")
            for r in rows:
                fh.write(",".join(r[k] if k == "label" else repr(float(r[k])) for k in keys) + "\n")
        manifest.add(path)
    text = _render_table(rows)
    (out / "table1.txt").write_text(text + "\n")
    manifest.add(out / "table1.txt")
    manifest.finish(out)
    print(text)
    return {"rows": rows}


def cmd_steady(args) -> dict:
    cfg = _config(args)
    sec = cfg.require("steady")
    params = cfg.params()
    spec = SystemSpec(params, tuple(sec.get("couplings", [])), tuple(sec.get("rabi", [])),
                      float(sec.get("pump", 0.0)), int(sec.get("fock_cutoff", 5)))
    state = steady_state(spec)
    result = {"n_atoms": spec.n_atoms, "fock_cutoff": state.spec.fock_cutoff,
              "residual": state.residual, "photon_number": photon_number(state),
              "field_amplitude": abs(field_amplitude(state))}
    for j in range(spec.n_atoms):
        result[f"excited_population_{j}"] = excited_population(state, j)
    if result["photon_number"] > 0:
        result["field_g2_zero"] = field_g2_zero(spec)
    if spec.pump > 0 and spec.n_atoms == 1 and spec.rabi[0] == 0:
        c_n = spec.couplings[0] ** 2 / (2 * params.kappa * params.gamma)
        alpha = intracavity_amplitude(c_n, DriveConfig(pump_strength=spec.pump), params.kappa)
        result["weak_drive_amplitude"] = alpha
        result["amplitude_relative_error"] = abs(np.sqrt(result["photon_number"]) - alpha) / alpha
        if "fringe_amplitude" in sec:
            b = float(sec["fringe_amplitude"])
            j_in = float(sec.get("j_in", 1.0))
            result["reflected_flux_per_s"] = reflected_flux(spec, j_in, b, state)
            result["closed_form_flux_per_s"] = reflection_rate(
                c_n, DriveConfig(j_in=j_in, fringe_amplitude=b)).j_out
            result["output_g2_zero"] = output_g2_zero(spec, b, state)
    out = _out_dir(args)
    manifest = RunManifest.start("steady", __version__, cfg.seed, cfg.data)
    manifest.add(write_json(out / "steady.json", result))
    manifest.finish(out)
    return result


def _zeeman_drive(sec: dict, s: float) -> DrivePolarization:
    pol = sec.get("polarization", "perpendicular")
    if pol == "perpendicular":
        return DrivePolarization.perpendicular(s)
    if pol in ("sigma+", "sigma-"):
        return DrivePolarization.circular(1 if pol == "sigma+" else -1, s)
    if pol == "linear":
        return DrivePolarization.linear(float(sec.get("theta", 0.0)), float(sec.get("phi", 0.0)), s)
    raise ConfigError(f"unknown zeeman.polarization '{pol}'")


def cmd_zeeman(args) -> dict:
    cfg = _config(args)
    sec = cfg.require("zeeman")
    scheme = LevelScheme.f2_f3()
    method = sec.get("method", "rate")
    rows = []
    for s in sec.get("saturation", [1.0]):
        drive = _zeeman_drive(sec, float(s))
        pops = equilibrium_populations(scheme, drive, method)
        rows.append({"saturation": float(s), "sigma_fraction": sigma_fraction(pops, scheme),
                     "cooperativity_ratio": cooperativity_ratio(scheme, drive, method),
                     "ground_populations": pops.ground, "excited_populations": pops.excited})
    ratios = [r["cooperativity_ratio"] for r in rows]
    result = {"method": method, "polarization": sec.get("polarization", "perpendicular"),
              "rows": rows, "ratio_spread": max(ratios) - min(ratios)}
    out = _out_dir(args)
    manifest = RunManifest.start("zeeman", __version__, cfg.seed, cfg.data)
    manifest.add(write_json(out / "zeeman.json", result))
    manifest.finish(out)
    return result


COMMANDS = {"neff": cmd_neff, "simulate": cmd_simulate, "analyze": cmd_analyze,
            "table1": cmd_table1, "steady": cmd_steady, "zeeman": cmd_zeeman}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cavitydetect",
                                 description="Atom detection in a fibre-cavity: models and simulations")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--preset", choices=PRESETS, help="built-in configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="curve file format")
    common.add_argument("--error-json", metavar="PATH",
                        help="write errors as JSON to PATH ('-' for stderr)")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("neff", parents=[common], help="N_eff distribution and moments")
    sub.add_parser("simulate", parents=[common], help="synthetic count streams")
    an = sub.add_parser("analyze", parents=[common], help="g2, variance and fidelity reports")
    an.add_argument("counts", nargs="*", help="counts CSV files")
    sub.add_parser("table1", parents=[common], help="detection fidelity comparison table")
    sub.add_parser("steady", parents=[common], help="master-equation steady state")
    sub.add_parser("zeeman", parents=[common], help="Zeeman-resolved cooperativity ratio")
    return ap


def _classify(exc: BaseException) -> int:
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(exc, (SteadyStateError, FitError, FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (ConfigError, FormatError, DimensionError, ValueError, KeyError, TypeError)):
        return EXIT_INVALID
    if isinstance(exc, (RuntimeError, ArithmeticError)):
        return EXIT_NUMERIC
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = COMMANDS[args.command](args)
    except Exception as exc:  # mapped to an exit code below
        code = _classify(exc)
        payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code,
                   "command": args.command}
        if args.error_json == "-":
            sys.stderr.write(json.dumps(payload) + "\n")
        else:
            print(f"error: {exc}", file=sys.stderr)
            if args.error_json:
                Path(args.error_json).write_text(json.dumps(payload) + "\n")
        return code
    if args.command != "table1":
        print(json.dumps(to_jsonable(result), indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
