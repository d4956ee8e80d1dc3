import json
import subprocess
import sys

import numpy as np
import pytest

from chemofence.cli import EXIT_CONFIG, EXIT_INVARIANT, InvariantViolation, check_metrics, main
from chemofence.core import RngStream
from chemofence.signal import SignalModel, synthetic_traces
from chemofence.sim import RunMetrics

CONFIG = {"t_max": 30, "n_targets": 10, "mode": "bounded",
          "arena": {"shape": "circle", "radius": 14, "walled": True}}


@pytest.fixture
def config_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CONFIG))
    return p


def cli(*args):
    return subprocess.run([sys.executable, "-m", "chemofence", *map(str, args)],
                          capture_output=True, text=True)


def test_run_twice_byte_identical(tmp_path, config_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"m{k}.csv"
        r = cli("run", "--config", config_path, "--seed", 2**63 + 5, "--trace",
                tmp_path / f"t{k}.csv", "--out", out)
        assert r.returncode == 0, r.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
    assert outs[0].startswith(b"rep,t,targets_found,within_6,")


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"P_b": 0.05, "M": 50}))
    assert main(["run", "--config", str(p)]) == EXIT_CONFIG
    assert "P_b*M" in capsys.readouterr().err
    p.write_text(json.dumps({"mode": "bounded"}))
    assert main(["run", "--config", str(p)]) == EXIT_CONFIG


def test_invariant_check():
    good = RunMetrics(np.arange(3.0), np.ones((3, 2)), np.array([0, 1, 1]), np.zeros((3, 2)),
                      5, 0, 0)
    check_metrics(good)
    bad = RunMetrics(np.arange(3.0), np.ones((3, 2)), np.array([0, 2, 1]), np.zeros((3, 2)),
                     5, 0, 0)
    with pytest.raises(InvariantViolation):
        check_metrics(bad)
    nan = RunMetrics(np.arange(3.0), np.full((3, 2), np.nan), np.zeros(3), np.zeros((3, 2)), 5, 0, 0)
    with pytest.raises(InvariantViolation):
        check_metrics(nan)
    assert EXIT_INVARIANT != 0


def test_calibrate(tmp_path, capsys):
    data = tmp_path / "cal.csv"
    synthetic_traces(SignalModel(), RngStream(1)).to_csv(data)
    with pytest.warns(UserWarning):
        rc = main(["calibrate", "--data", str(data), "--segment", "1.0", "--out", str(tmp_path / "o")])
    assert rc == 0
    summary = json.loads((tmp_path / "o" / "calibration.json").read_text())
    assert {"A0", "alpha", "Ae", "pooled_ratio", "residual_norm", "converged"} <= set(summary)
    assert summary["converged"] is True
    assert json.loads(capsys.readouterr().out) == summary
    assert (tmp_path / "o" / "segments.csv").read_text().startswith("start,end,count,")


def test_experiment_and_report(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "stationary_search", "repetitions": 2,
                                "base": {"M": 10.0, "D": 1000.0, "t_max": 200.0, "n_targets": 100},
                                "times": [100, 200]}))
    out = tmp_path / "out"
    assert main(["experiment", "--spec", str(spec), "--out", str(out), "--workers", "1"]) == 0
    for f in ("per_rep.csv", "summary.csv", "experiment.json"):
        assert (out / f).exists()
    assert main(["report", "--in", str(out), "--table", "2"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split()[3:5] == ["Bounded", "Unbounded"]


def test_heatmap_experiment_writes_csv(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "heatmap", "repetitions": 1,
                                "grid": {"v_n": [0.0], "M": [6.0], "D": [1000.0]},
                                "base": {"d_c": 10.0, "t_max": 20.0}, "window": 10}))
    assert main(["experiment", "--spec", str(spec), "--out", str(tmp_path / "h")]) == 0
    assert (tmp_path / "h" / "heatmap.csv").read_text().startswith("v_n,M,D,d_r,mean,ci95\n")


def test_plan_export(tmp_path):
    out = tmp_path / "plan.csv"
    assert main(["plan", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "index,x,y,phase" and len(lines) == 1 + 18
