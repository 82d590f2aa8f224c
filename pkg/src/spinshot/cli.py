"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 config/parse/I-O error,
3 numerical failure (fit, calibration, or g2 normalization).
All numeric output files are CSV with documented headers; every run
writes a manifest.json recording the inputs and the produced files
(timestamps live only in the manifest, so reruns with the same config
and seed are byte-identical elsewhere).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .config import (ConfigError, bath_params, cavity_config, emitter_config,
                     load_config, microwave_settings, readout_params,
                     zeeman_config)
from .estimators import (FitError, NormalizationError, fit_model,
                         format_fit_report, g2_pulsed, read_series_csv)
from .montecarlo import PhotonRecords, pulse_area_scan, run_timeline
from .physics import (cavity_linewidth, effective_lifetime, zeeman_transitions)
from .readout import (CalibrationError, calibrate_flip_asymmetry,
                      dark_count_penalty, format_fidelity_report,
                      optimize_readout, readout_report)
from .sequence import (CompileError, ParseError, compile_sequence,
                       duration_report, parse_sequence)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


class OutputDir:
    """Collects output files and writes the closing manifest."""

    def __init__(self, path: str):
        self.root = path
        os.makedirs(path, exist_ok=True)
        self.files: list[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def record(self, name: str) -> str:
        self.files.append(name)
        return self.path(name)

    def write_text(self, name: str, text: str):
        with open(self.record(name), "w", encoding="utf-8") as fh:
            fh.write(text)

    def write_manifest(self, **fields):
        fields["outputs"] = sorted(self.files)
        with open(self.path("manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(fields, fh, indent=2, sort_keys=True)
            fh.write("\n")


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default="paper.cfg",
                        help="config file (falls back to packaged presets)")
    common.add_argument("--seed", type=int, default=0,
                        help="random seed (default 0)")
    common.add_argument("--shots", type=int, default=None,
                        help="Monte Carlo shots (command-specific default)")
    common.add_argument("--out-dir", default="spinshot-out",
                        help="output directory (default ./spinshot-out)")
    common.add_argument("--format", choices=("csv", "report"), default="report",
                        help="csv: data files only; report: also a text report")

    parser = _Parser(prog="spinshot",
                     description="Cavity-enhanced single-spin readout toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("levels", parents=[common],
                       help="optical transition frequencies for a config")

    p = sub.add_parser("readout-optimize", parents=[common],
                       help="scan pulse number and threshold for best fidelity")
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--n-max", type=int, default=150)

    p = sub.add_parser("simulate", parents=[common],
                       help="Monte Carlo run of a pulse-sequence file")
    p.add_argument("sequence", help="sequence DSL file")

    p = sub.add_parser("fit", parents=[common],
                       help="least-squares fit of a CSV series")
    p.add_argument("series", help="CSV with columns x,y[,sigma]")
    p.add_argument("--model", required=True,
                   choices=("exp_decay", "exp_relax", "gaussian_echo",
                            "damped_sine", "lorentzian", "gaussian_sum"))
    p.add_argument("--components", type=int, default=3,
                   help="components for gaussian_sum (default 3)")

    p = sub.add_parser("g2", parents=[common],
                       help="pulsed autocorrelation of a photon-records file")
    p.add_argument("records", help="event file: shot_id pulse_index timestamp origin")
    p.add_argument("--pulse-period", type=float, default=10.0,
                   help="pulse period in us (default 10)")
    p.add_argument("--lags", type=int, default=20,
                   help="cross lags used for normalization (default 20)")

    p = sub.add_parser("area-sweep", parents=[common],
                       help="cyclicity and fidelity vs excitation pulse area")
    p.add_argument("--area-min", type=float, default=0.1)
    p.add_argument("--area-max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--flip-slope", type=float, default=0.0,
                   help="extra bright-state flip probability per unit area")

    p = sub.add_parser("calibrate", parents=[common],
                       help="invert the flip asymmetry for a target fidelity")
    p.add_argument("--target-f", type=float, default=None,
                   help="target fidelity (default: [readout] target_fidelity)")
    p.add_argument("--threshold", type=int, default=1)
    p.add_argument("--n-pulses", type=int, default=None,
                   help="pulse count (default: [readout] n_pulses)")

    return parser


# ---------------------------------------------------------------------------
# handlers (return the report text)
# ---------------------------------------------------------------------------

def _cmd_levels(args, out: OutputDir) -> str:
    cfg = load_config(args.config)
    em, cav, z = emitter_config(cfg), cavity_config(cfg), zeeman_config(cfg)
    levels = zeeman_transitions(em, z)
    kappa = cavity_linewidth(cav)
    lines = ["label,frequency_ghz"]
    for label, freq in levels.by_label().items():
        lines.append(f"{label},{freq:.12g}")
    out.write_text("levels.csv", "\n".join(lines) + "\n")
    report = [
        f"optical transitions at B = {z.magnetic_field_t:g} T "
        f"(axis {z.field_axis}):",
    ]
    for label, freq in levels.by_label().items():
        report.append(f"  {label} = {freq:.12g} GHz")
    report += [
        f"ground splitting:  {levels.ground_splitting_ghz:.6g} GHz",
        f"excited splitting: {levels.excited_splitting_ghz:.6g} GHz",
        f"A-D splitting:     "
        f"{levels.freq_a_ghz - levels.freq_d_ghz:.6g} GHz",
        f"cavity linewidth:  {kappa:.6g} GHz",
        f"effective lifetime on resonance: "
        f"{effective_lifetime(em, cav, 0.0):.6g} us",
    ]
    return "\n".join(report) + "\n"


def _cmd_readout_optimize(args, out: OutputDir) -> str:
    cfg = load_config(args.config)
    params = readout_params(cfg, n_pulses=args.n_max)
    result = optimize_readout(params, (args.n_min, args.n_max))
    result.to_csv(out.record("fidelity_vs_n.csv"))
    best = replace(params, n_pulses=result.n_star)
    report_obj = readout_report(best, result.threshold_star)
    penalty = dark_count_penalty(best, result.threshold_star)
    lines = [
        f"scanned N = {args.n_min}..{args.n_max}, thresholds 1..N",
        f"best pulse number: {result.n_star}",
        f"best threshold:    {result.threshold_star}",
        f"best fidelity:     {result.f_star:.12g}",
        "",
        format_fidelity_report(report_obj).rstrip("\n"),
        f"dark-count penalty at threshold "
        f"{result.threshold_star}: {penalty:.12g}",
    ]
    return "\n".join(lines) + "\n"


def _cmd_simulate(args, out: OutputDir) -> str:
    cfg = load_config(args.config)
    with open(args.sequence, "r", encoding="utf-8") as fh:
        text = fh.read()
    program = parse_sequence(text, filename=args.sequence)
    em, cav = emitter_config(cfg), cavity_config(cfg)
    levels = zeeman_transitions(em, zeeman_config(cfg))
    timeline = compile_sequence(program, levels)
    params = readout_params(cfg)
    bath = bath_params(cfg)
    mw = microwave_settings(cfg)
    shots = args.shots if args.shots is not None else 1000
    run = run_timeline(
        timeline, params, bath, shots=shots, seed=args.seed,
        emission_lifetime_us=effective_lifetime(em, cav, 0.0),
        mw_rabi_khz=mw["mw_rabi_khz"],
        spectral_diffusion_fwhm_mhz=em.spectral_diffusion_fwhm_mhz)
    run.histogram.to_csv(out.record("counts.csv"))
    run.records.to_file(out.record("events.txt"))
    durations = duration_report(program)
    lines = [
        f"sequence: {args.sequence}",
        f"events: {len(timeline.events)}   detection gates: {run.gate_count}",
        f"total duration: {durations.total_ms:.12g} ms",
        f"shots: {shots}   seed: {args.seed}",
        f"mean detected photons per shot: {run.histogram.mean():.12g}",
        f"detected events on file: {len(run.records)}",
    ]
    return "\n".join(lines) + "\n"


def _cmd_fit(args, out: OutputDir) -> str:
    x, y, sigma = read_series_csv(args.series)
    kind = args.model
    result = fit_model(kind, x, y, sigma=sigma,
                       n_components=args.components if kind == "gaussian_sum" else None)
    lines = ["parameter,value,uncertainty"]
    for name, value in result.params.items():
        lines.append(f"{name},{value:.12g},{result.uncertainties[name]:.12g}")
    out.write_text("fit_params.csv", "\n".join(lines) + "\n")
    return format_fit_report(result)


def _cmd_g2(args, out: OutputDir) -> str:
    records = PhotonRecords.from_file(args.records)
    result = g2_pulsed(records, args.pulse_period, n_lags=args.lags)
    lines = ["lag,pair_rate"]
    for lag, rate in zip(result.lags, result.pair_rates):
        lines.append(f"{lag},{rate:.12g}")
    out.write_text("g2.csv", "\n".join(lines) + "\n")
    return (f"events: {len(records)}   shots: {records.n_shots}   "
            f"pulses per shot: {records.n_pulses}\n"
            f"g2(0) = {result.g2_zero:.12g} "
            f"(normalized over lags 1..{int(result.lags[-1])})\n")


def _cmd_area_sweep(args, out: OutputDir) -> str:
    cfg = load_config(args.config)
    params = readout_params(cfg)
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    areas = np.linspace(args.area_min, args.area_max, args.points)
    a0, b0 = params.flip_bright, params.flip_dark
    slope = args.flip_slope

    def flip_bright_model(area):
        return min(a0 + slope * area, 1.0)

    scan = pulse_area_scan(areas, flip_bright_model, lambda area: b0,
                           params,
                           shots=args.shots if args.shots is not None else 20000,
                           seed=args.seed)
    scan.to_csv(out.record("area_sweep.csv"))
    finite = np.isfinite(scan.zeta)
    if finite.any():
        zeta_line = (f"cyclicity range: {scan.zeta[finite].min():.6g}"
                     f"..{scan.zeta[finite].max():.6g}")
    else:
        zeta_line = "cyclicity: no finite values (trace fits failed)"
    lines = [
        f"areas: {args.area_min:g}..{args.area_max:g} ({args.points} points)",
        f"flip model: a(area) = {a0:.6g} + {slope:.6g}*area, b = {b0:.6g}",
        zeta_line,
        f"fidelity range: {scan.f_min.min():.6g}..{scan.f_min.max():.6g}",
    ]
    return "\n".join(lines) + "\n"


def _cmd_calibrate(args, out: OutputDir) -> str:
    cfg = load_config(args.config)
    params = readout_params(cfg, n_pulses=args.n_pulses)
    relaxation = cfg.number("readout", "relaxation_constant")
    target = args.target_f
    if target is None:
        target = cfg.number("readout", "target_fidelity")
    cal = calibrate_flip_asymmetry(
        relaxation_constant=relaxation, target_f=target,
        n_pulses=params.n_pulses, threshold=args.threshold,
        p_excite=params.p_excite, eta_detect=params.eta_detect,
        dark_rate=params.dark_rate, gate_window=params.gate_window,
        pulse_period=params.pulse_period)
    out.write_text(
        "calibration.csv",
        "a,b,asymmetry,achieved_f,f_max\n"
        f"{cal.a:.12g},{cal.b:.12g},{cal.asymmetry:.12g},"
        f"{cal.achieved_f:.12g},{cal.f_max:.12g}\n")
    return (
        f"relaxation constant: {relaxation:g} pulses\n"
        f"target fidelity: {target:.12g} at N={params.n_pulses}, "
        f"threshold {args.threshold}\n"
        f"flip_bright (a): {cal.a:.12g}\n"
        f"flip_dark  (b): {cal.b:.12g}\n"
        f"asymmetry s = a/(a+b): {cal.asymmetry:.12g}\n"
        f"achieved fidelity: {cal.achieved_f:.12g} "
        f"(model maximum {cal.f_max:.12g})\n")


_HANDLERS = {
    "levels": _cmd_levels,
    "readout-optimize": _cmd_readout_optimize,
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "g2": _cmd_g2,
    "area-sweep": _cmd_area_sweep,
    "calibrate": _cmd_calibrate,
}


def _config_fields(args):
    fields = {"config": None, "config_sha256": None}
    if getattr(args, "config", None):
        try:
            from .config import resolve_config_path
            path = resolve_config_path(args.config)
            with open(path, "rb") as fh:
                data = fh.read()
            fields["config"] = args.config
            fields["config_sha256"] = hashlib.sha256(data).hexdigest()
        except ConfigError:
            pass
    return fields


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        started = _utc_now()
        out = OutputDir(args.out_dir)
        report = _HANDLERS[args.command](args, out)
        if args.format == "report":
            out.write_text("report.txt", report)
            sys.stdout.write(report)
        out.write_manifest(
            command=args.command,
            seed=args.seed,
            shots=args.shots,
            version=__version__,
            started_at=started,
            finished_at=_utc_now(),
            **_config_fields(args),
        )
        return EXIT_OK
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ParseError, CompileError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, CalibrationError, NormalizationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
