"""Command line entry point: ``chemofence <command> ...``."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .core import ArenaSpec, ConfigError, load_config
from .experiments import ExperimentSpec, format_table, heatmap_csv, run_experiment
from .nest import MissionError, mission_from_dict, plan_sweep
from .signal import CalibrationData, SignalModel, fit_attenuation, noise_ratio_analysis
from .sim import DEFAULT_RADII, run

EXIT_CONFIG = 2
EXIT_INVARIANT = 3


class InvariantViolation(RuntimeError):
    pass


def check_metrics(m) -> None:
    """Raise InvariantViolation if a finished run breaks a simulator invariant."""
    if not np.all(np.isfinite(m.dist)):
        raise InvariantViolation("non-finite robot position")
    if np.any(np.diff(m.found) < 0):
        raise InvariantViolation("targets-found series decreased")
    if m.found[-1] > m.n_targets:
        raise InvariantViolation("more targets found than placed")


def cmd_calibrate(args) -> int:
    data = CalibrationData.from_csv(args.data)
    fit = fit_attenuation(data)
    noise = noise_ratio_analysis(data, args.segment)
    summary = fit.summary()
    summary["pooled_ratio"] = noise.pooled_ratio
    summary["segment_mean_basis"] = noise.mean_basis
    summary["skipped_segments"] = len(noise.skipped)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        rows = noise.to_rows()
        with open(os.path.join(args.out, "segments.csv"), "w") as fh:
            cols = list(rows[0])
            fh.write(",".join(cols) + "\n")
            for r in rows:
                fh.write(",".join(repr(r[c]) for c in cols) + "\n")
        with open(os.path.join(args.out, "calibration.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return 0 if fit.converged and fit.identifiable else 1


def cmd_run(args) -> int:
    cfg, arena, mission_d, signal_d = load_config(args.config)
    plan = mission_from_dict(mission_d, arena)
    signal = SignalModel.from_dict(signal_d)
    seed = cfg.seed if args.seed is None else args.seed
    trace_fh = open(args.trace, "w", newline="") if args.trace else None
    try:
        m = run(cfg, arena, plan, seed=seed, rep=args.rep, signal=signal, trace=trace_fh,
                trace_every=args.trace_every)
    finally:
        if trace_fh:
            trace_fh.close()
    check_metrics(m)
    radii = args.radii or list(DEFAULT_RADII)
    if args.out and args.out != "-":
        with open(args.out, "w", newline="") as fh:
            m.to_csv(fh, radii)
    else:
        m.to_csv(sys.stdout, radii)
    return 0


def cmd_experiment(args) -> int:
    with open(args.spec) as fh:
        spec = ExperimentSpec.from_dict(json.load(fh))
    if args.reps:
        spec.repetitions = args.reps

    def progress(done, total):
        if args.verbose:
            print(f"\r{done}/{total} jobs", end="", file=sys.stderr, flush=True)

    result = run_experiment(spec, workers=args.workers, progress=progress)
    if args.verbose:
        print(file=sys.stderr)
    result.write(args.out)
    if spec.kind == "heatmap":
        heatmap_csv(result, os.path.join(args.out, "heatmap.csv"))
    return 0


def cmd_report(args) -> int:
    sys.stdout.write(format_table(args.table, args.input))
    return 0


def cmd_plan(args) -> int:
    arena = ArenaSpec.rectangle(args.width, args.height, (args.x, args.y))
    plan_sweep(arena, args.spacing).to_csv(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chemofence", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit the attenuation model to logged intensities")
    p.add_argument("--data", required=True, help="CSV with columns distance_m,intensity")
    p.add_argument("--segment", type=float, default=1.0, help="segment length in metres")
    p.add_argument("--out", help="directory for segments.csv and calibration.json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="simulate one repetition")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--trace", help="write a per-tick trace CSV here")
    p.add_argument("--trace-every", type=int, default=1, help="ticks between trace rows")
    p.add_argument("--out", help="metrics CSV path (default: stdout)")
    p.add_argument("--radii", type=float, nargs="*", help="d_r values for within_* columns")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="run a batch experiment")
    p.add_argument("--spec", required=True, help='JSON, e.g. {"kind": "containment"}')
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--reps", type=int, help="override the repetition count")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="print a results directory as a table")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--table", required=True, choices=["1", "2", "3", "heatmap"])
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plan", help="export a sweep plan as CSV")
    p.add_argument("--width", type=float, default=100.0)
    p.add_argument("--height", type=float, default=100.0)
    p.add_argument("--x", type=float, default=0.0, help="arena centre x")
    p.add_argument("--y", type=float, default=0.0, help="arena centre y")
    p.add_argument("--spacing", type=float, default=25.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plan)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MissionError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
