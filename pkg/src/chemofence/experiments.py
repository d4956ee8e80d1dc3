"""Batch harness: parameter grids x seeded repetitions -> summary tables.

A job is one ``(parameter tuple, repetition)`` pair.  Every job draws its
streams from ``(spec.seed, repetition)`` alone, so the same repetition index
sees the same random numbers under every parameter tuple (common random
numbers), and any single job can be rerun in isolation.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import __version__
from .core import ArenaSpec, Mode, SimConfig, validate_config
from .nest import SweepPlan, mission_from_dict, plan_sweep, stationary, straight_mission
from .signal import SignalModel
from .sim import RunMetrics, _fmt, run

Z95 = 1.96
KINDS = ("containment", "heatmap", "stationary_search", "moving_search", "custom")
STRAIGHT_LENGTH = 100.0


@dataclass
class ExperimentSpec:
    """What to run.

    ``grid`` maps a parameter name to its values; the experiment runs the
    cartesian product.  Names are :class:`SimConfig` fields plus ``variant``
    for the search experiments (``bounded``, ``unbounded`` or ``chemotaxis``).
    ``base`` overrides config defaults for every job.
    """

    kind: str
    grid: dict[str, list]
    repetitions: int = 30
    seed: int = 0
    radii: list[float] = field(default_factory=list)
    times: list[float] = field(default_factory=list)
    window: float | None = 500.0
    base: dict[str, Any] = field(default_factory=dict)
    arena: dict[str, Any] | None = None
    mission: dict[str, Any] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("parameter grid must be non-empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def tuples(self) -> list[tuple[tuple[str, Any], ...]]:
        names = list(self.grid)
        return [tuple(zip(names, vals)) for vals in itertools.product(*(self.grid[n] for n in names))]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "grid": self.grid, "repetitions": self.repetitions,
            "seed": self.seed, "radii": self.radii, "times": self.times, "window": self.window,
            "base": self.base, "arena": self.arena, "mission": self.mission,
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        d = dict(d)
        kind = d.pop("kind")
        spec = default_spec(kind) if kind != "custom" else None
        allowed = {"grid", "repetitions", "seed", "radii", "times", "window", "base", "arena", "mission"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        if spec is None:
            return cls(kind=kind, **d)
        for k, v in d.items():
            setattr(spec, k, v)
        spec.__post_init__()
        return spec

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def default_spec(kind: str, repetitions: int = 30, seed: int = 0) -> ExperimentSpec:
    """Default experiment setups, ready to run."""
    if kind == "containment":
        return ExperimentSpec(kind, {"d_c": [6.0, 8.0, 10.0, 12.0, 14.0]}, repetitions, seed,
                              radii=[6, 8, 10, 12, 14, 16, 18, 20, 22],
                              base={"M": 10.0, "D": 1000.0, "t_max": 1500.0})
    if kind == "heatmap":
        return ExperimentSpec(kind, {"v_n": [0.0, 0.125, 0.25],
                                     "M": [1.0, 2.0, 6.0, 10.0, 20.0, 50.0],
                                     "D": [1.0, 10.0, 100.0, 1000.0]},
                              repetitions, seed, radii=[10, 16], base={"d_c": 10.0})
    if kind == "stationary_search":
        return ExperimentSpec(kind, {"variant": ["bounded", "unbounded", "chemotaxis"],
                                     "d_c": [10.0, 12.0, 14.0]},
                              repetitions, seed, times=[200, 400, 600, 800, 1000],
                              base={"M": 10.0, "D": 1000.0, "t_max": 1000.0, "n_targets": 100})
    if kind == "moving_search":
        return ExperimentSpec(kind, {"variant": ["bounded", "unbounded", "chemotaxis"],
                                     "v_n": [0.1, 0.125, 0.167, 0.25]},
                              repetitions, seed, times=[2000, 4000, 6000, 8000, 10000],
                              base={"d_c": 12.0, "M": 6.0, "D": 1000.0, "t_max": 10000.0,
                                    "n_targets": 100})
    if kind == "custom":
        raise ValueError("custom experiments have no default")
    raise ValueError(f"unknown experiment kind {kind!r}")


# --------------------------------------------------------------------------
# job construction


def straight_duration(v_n: float, v_r: float, length: float = STRAIGHT_LENGTH) -> float:
    """Whole seconds needed to finish a straight mission."""
    return float(math.ceil(length / (v_n * v_r) - 1e-9))


def canonical_tuples(spec: ExperimentSpec) -> list[tuple]:
    """Parameter tuples with baseline variants collapsed.

    In the search experiments the bounded and unbounded baselines ignore the
    chemotaxis parameters and keep the nest still, so each baseline appears
    once, with those entries dropped from its tuple.
    """
    out, seen = [], set()
    for tup in spec.tuples():
        p = dict(tup)
        if p.get("variant") in ("bounded", "unbounded"):
            tup = tuple((k, v) for k, v in tup if k == "variant")
        if tup not in seen:
            seen.add(tup)
            out.append(tup)
    return out


def build_job(spec: ExperimentSpec, params: tuple) -> tuple[SimConfig, ArenaSpec, SweepPlan]:
    p = dict(params)
    variant = p.pop("variant", None)
    fields = {**spec.base, **p}
    fields.setdefault("repetitions", spec.repetitions)
    fields.setdefault("seed", spec.seed)
    kind = spec.kind

    if kind == "containment":
        arena = ArenaSpec.circle(50.0)
        plan = stationary(arena.origin)
        fields["mode"] = Mode.CHEMOTAXIS
    elif kind == "heatmap":
        arena = ArenaSpec.circle(50.0)
        fields["mode"] = Mode.CHEMOTAXIS
        v_n = float(fields.get("v_n", 0.0))
        if v_n > 0:
            plan = straight_mission(arena.origin, STRAIGHT_LENGTH)
            fields.setdefault("t_max", straight_duration(v_n, float(fields.get("v_r", SimConfig.v_r))))
        else:
            plan = stationary(arena.origin)
            fields.setdefault("t_max", 1500.0)
    elif kind == "stationary_search":
        walled = variant == "bounded"
        arena = ArenaSpec.circle(14.0, walled=walled)
        plan = stationary(arena.origin)
        fields["mode"] = Mode(variant)
    elif kind == "moving_search":
        walled = variant == "bounded"
        arena = ArenaSpec.rectangle(100.0, 100.0, walled=walled)
        if variant == "chemotaxis":
            plan = plan_sweep(arena, float(fields.pop("lane_spacing", 25.0)))
        else:
            fields["v_n"] = 0.0
            fields.pop("lane_spacing", None)
            plan = stationary(arena.origin)
        fields["mode"] = Mode(variant)
    else:  # custom
        arena = ArenaSpec.from_dict(spec.arena) if spec.arena else ArenaSpec()
        plan = mission_from_dict(spec.mission, arena)
        if "mode" in fields:
            fields["mode"] = Mode(fields["mode"])
    for k in ("dt", "v_r", "P_b", "M", "D", "d_c", "sense_period", "v_n", "d_n", "t_max",
              "robot_radius", "spawn_radius", "turn_rate"):
        if k in fields:
            fields[k] = float(fields[k])
    cfg = validate_config(SimConfig(**fields), arena)
    return cfg, arena, plan


def job_metrics(spec: ExperimentSpec, m: RunMetrics) -> dict[str, float]:
    """Scalar metrics of one repetition."""
    out: dict[str, float] = {}
    for r in spec.radii:
        out[f"within_{_fmt(r)}"] = m.time_avg_within(r, spec.window)
        out[f"within_{_fmt(r)}_end"] = float(m.endpoint_within(r))
    for t in spec.times:
        out[f"found_{_fmt(t)}"] = float(m.found_at(t))
    return out


def run_job(spec: ExperimentSpec, params: tuple, rep: int) -> dict[str, float]:
    cfg, arena, plan = build_job(spec, params)
    m = run(cfg, arena, plan, seed=spec.seed, rep=rep, signal=SignalModel())
    return job_metrics(spec, m)


def _run_job_packed(args):
    spec_d, params, rep = args
    return run_job(ExperimentSpec.from_dict(spec_d), params, rep)


# --------------------------------------------------------------------------
# aggregation


def summarize(samples) -> tuple[float, float | None]:
    """Sample mean and normal-approximation 95% half-width (None for n < 2)."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("no samples")
    mean = float(x.mean())
    if x.size < 2:
        return mean, None
    return mean, float(Z95 * x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class SummaryRow:
    params: tuple
    metric: str
    mean: float
    ci95: float | None
    reps: int

    def as_dict(self) -> dict:
        d = dict(self.params)
        d.update(metric=self.metric, mean=self.mean, ci95=self.ci95, reps=self.reps)
        return d


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    tuples: list[tuple]
    per_rep: dict[tuple, list[dict[str, float]]]  # params -> metrics by repetition
    rows: list[SummaryRow]

    def row(self, metric: str, **params) -> SummaryRow:
        for r in self.rows:
            if r.metric == metric and all(dict(r.params).get(k) == v for k, v in params.items()):
                return r
        raise KeyError((metric, params))

    def mean(self, metric: str, **params) -> float:
        return self.row(metric, **params).mean

    def param_names(self) -> list[str]:
        names: list[str] = []
        for t in self.tuples:
            for k, _ in t:
                if k not in names:
                    names.append(k)
        return names

    def write(self, out_dir) -> None:
        """Per-rep CSV, summary CSV and a metadata JSON into ``out_dir``."""
        os.makedirs(out_dir, exist_ok=True)
        names = self.param_names()
        metrics = sorted({k for reps in self.per_rep.values() for m in reps for k in m})
        with open(os.path.join(out_dir, "per_rep.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ["rep"] + metrics)
            for t in self.tuples:
                p = dict(t)
                for rep, m in enumerate(self.per_rep[t]):
                    w.writerow([_cell(p.get(n)) for n in names] + [rep]
                               + [repr(m[k]) for k in metrics])
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ["metric", "mean", "ci95", "reps"])
            for r in self.rows:
                p = dict(r.params)
                w.writerow([_cell(p.get(n)) for n in names]
                           + [r.metric, repr(r.mean), "" if r.ci95 is None else repr(r.ci95), r.reps])
        meta = {
            "kind": self.spec.kind,
            "spec": self.spec.to_dict(),
            "spec_hash": self.spec.digest(),
            "seed": self.spec.seed,
            "version": __version__,
            "ci95": "normal approximation, 1.96 * sample std (ddof=1) / sqrt(reps)",
            "within_metric": ("time average of robots within d_r over samples with "
                              f"t > t_end - {self.spec.window} s (the *_end columns hold "
                              "the count at t_end)"),
        }
        with open(os.path.join(out_dir, "experiment.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def aggregate(spec: ExperimentSpec, tuples: list[tuple],
              per_rep: dict[tuple, list[dict[str, float]]]) -> list[SummaryRow]:
    rows = []
    for t in tuples:
        reps = per_rep[t]
        for k in sorted(reps[0]):
            mean, ci = summarize([m[k] for m in reps])
            rows.append(SummaryRow(t, k, mean, ci, len(reps)))
    return rows


def run_experiment(spec: ExperimentSpec, workers: int = 1, order=None, progress=None) -> ExperimentResult:
    """Run every ``(tuple, repetition)`` job and aggregate.

    ``order`` optionally permutes job execution (used to check that the
    result does not depend on it).  ``progress`` is called with
    ``(done, total)`` after each job.
    """
    tuples = canonical_tuples(spec)
    jobs = [(t, rep) for t in tuples for rep in range(spec.repetitions)]
    if order is not None:
        jobs = [jobs[i] for i in order]
    results: dict[tuple, dict[str, float]] = {}
    if workers <= 1:
        for k, (t, rep) in enumerate(jobs):
            results[(t, rep)] = run_job(spec, t, rep)
            if progress:
                progress(k + 1, len(jobs))
    else:
        sd = spec.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = pool.map(_run_job_packed, [(sd, t, rep) for t, rep in jobs], chunksize=4)
            for k, ((t, rep), res) in enumerate(zip(jobs, futs)):
                results[(t, rep)] = res
                if progress:
                    progress(k + 1, len(jobs))
    per_rep = {t: [results[(t, rep)] for rep in range(spec.repetitions)] for t in tuples}
    return ExperimentResult(spec, tuples, per_rep, aggregate(spec, tuples, per_rep))


def run_containment(spec: ExperimentSpec | None = None, workers: int = 1) -> ExperimentResult:
    return run_experiment(spec or default_spec("containment"), workers)


def run_heatmap(spec: ExperimentSpec | None = None, workers: int = 1) -> ExperimentResult:
    return run_experiment(spec or default_spec("heatmap"), workers)


def run_stationary_search(spec: ExperimentSpec | None = None, workers: int = 1) -> ExperimentResult:
    return run_experiment(spec or default_spec("stationary_search"), workers)


def run_moving_search(spec: ExperimentSpec | None = None, workers: int = 1) -> ExperimentResult:
    return run_experiment(spec or default_spec("moving_search"), workers)


RUNNERS = {
    "containment": run_containment,
    "heatmap": run_heatmap,
    "stationary_search": run_stationary_search,
    "moving_search": run_moving_search,
    "custom": run_experiment,
}


# --------------------------------------------------------------------------
# tables


def read_summary(in_dir) -> tuple[dict, list[dict]]:
    with open(os.path.join(in_dir, "experiment.json")) as fh:
        meta = json.load(fh)
    with open(os.path.join(in_dir, "summary.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return meta, rows


def _cell_text(row: dict | None) -> str:
    if row is None:
        return "-"
    ci = row["ci95"]
    ci_txt = "n/a" if ci == "" else f"{float(ci):.2f}"
    return f"{float(row['mean']):.1f} ± {ci_txt}"


def _lookup(rows, metric, **params):
    for r in rows:
        if r["metric"] != metric:
            continue
        if all(r.get(k, "") == v for k, v in params.items()):
            return r
    return None


def format_table(which: str, in_dir) -> str:
    """Render a results directory as a fixed-width text table."""
    meta, rows = read_summary(in_dir)
    spec = meta["spec"]
    lines = []
    if which == "1":
        dcs = [_fmt(v) for v in spec["grid"]["d_c"]]
        lines.append("d_r \\ d_c " + " ".join(f"{d + 'm':>14}" for d in dcs))
        for r in spec["radii"]:
            cells = []
            for d in dcs:
                row = _lookup(rows, f"within_{_fmt(r)}", d_c=d) if float(r) >= float(d) else None
                cells.append(f"{_cell_text(row):>14}")
            lines.append(f"{_fmt(r):>9} " + " ".join(cells))
    elif which in ("2", "3"):
        cols = [("Bounded", {"variant": "bounded"}), ("Unbounded", {"variant": "unbounded"})]
        key = "d_c" if which == "2" else "v_n"
        for v in spec["grid"][key]:
            cols.append((f"{_fmt(v)}{'m' if which == '2' else ''}",
                         {"variant": "chemotaxis", key: _fmt(v)}))
        lines.append("t \\ col   " + " ".join(f"{c:>14}" for c, _ in cols))
        for t in spec["times"]:
            cells = [f"{_cell_text(_lookup(rows, f'found_{_fmt(t)}', **p)):>14}" for _, p in cols]
            lines.append(f"{_fmt(t):>9} " + " ".join(cells))
    elif which == "heatmap":
        Ms = [_fmt(v) for v in spec["grid"]["M"]]
        for v_n in spec["grid"]["v_n"]:
            for r in spec["radii"]:
                lines.append(f"v_n = {_fmt(v_n)}, d_r = {_fmt(r)} m   (rows D, columns M)")
                lines.append("     D \\ M " + " ".join(f"{m:>6}" for m in Ms))
                for D in spec["grid"]["D"]:
                    cells = []
                    for M in Ms:
                        row = _lookup(rows, f"within_{_fmt(r)}", v_n=_fmt(v_n), M=M, D=_fmt(D))
                        cells.append(f"{float(row['mean']):6.2f}" if row else "     -")
                    lines.append(f"{_fmt(D):>10} " + " ".join(cells))
                lines.append("")
    else:
        raise ValueError(f"unknown table {which!r}")
    return "\n".join(lines).rstrip() + "\n"


def heatmap_csv(result: ExperimentResult, path) -> None:
    """Long-format heatmap data: ``v_n,M,D,d_r,mean,ci95``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["v_n", "M", "D", "d_r", "mean", "ci95"])
        for r in result.rows:
            if r.metric.endswith("_end") or not r.metric.startswith("within_"):
                continue
            p = dict(r.params)
            w.writerow([_fmt(p["v_n"]), _fmt(p["M"]), _fmt(p["D"]), r.metric[len("within_"):],
                        repr(r.mean), "" if r.ci95 is None else repr(r.ci95)])
