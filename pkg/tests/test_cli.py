from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from killsde.cli import main
from killsde.measures import SubProbMeasure

FAST = ["--paths", "2000", "--dt", "0.01", "--horizon", "0.5"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_survival_table(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["survival", "--out", str(out), "--x0", "1.0", *FAST]) == 0
    rows = read_csv(out / "survival.csv")
    assert rows[0] == ["t", "mc_survival", "oracle_survival", "std_error"]
    t = np.array([float(r[0]) for r in rows[1:]])
    s = np.array([float(r[1]) for r in rows[1:]])
    assert np.all(np.diff(t) > 0) and np.all((s > 0) & (s <= 1)) and np.all(np.diff(s) <= 0)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] and manifest["config"]["seed"] is not None
    assert "PASS" in capsys.readouterr().out


def test_reruns_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["survival", "--out", str(a), "--seed", "3", "--threads", "1", *FAST]) == 0
    assert main(["survival", "--out", str(b), "--seed", "3", "--threads", "4", *FAST]) == 0
    assert (a / "survival.csv").read_bytes() == (b / "survival.csv").read_bytes()


def test_nothing_written_outside_out_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "only"
    assert main(["gradient", "--out", str(out), "--x", "1.0", "--v", "1.0", "--t", "0.5", *FAST]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["only"]
    grad = json.loads((out / "gradient.json").read_text())
    assert np.isfinite(grad["value"])


def test_metrics_subcommand(tmp_path):
    SubProbMeasure.dirac((0.8,)).to_csv(tmp_path / "mu.csv")
    SubProbMeasure.dirac((1.2,)).to_csv(tmp_path / "nu.csv")
    out = tmp_path / "m"
    assert main(["metrics", "--out", str(out), "--mu", str(tmp_path / "mu.csv"), "--nu", str(tmp_path / "nu.csv"),
                 "--bin-width", "0.1"]) == 0
    m = json.loads((out / "metrics.json").read_text())
    assert m["w1"] == pytest.approx(0.4, abs=1e-9) and m["w1_rho"] == pytest.approx(np.log(1.25) + 0.2, abs=1e-9)


def test_ddsde_subcommand(tmp_path):
    out = tmp_path / "d"
    assert main(["ddsde", "--out", str(out), "--picard", "--iters", "4", "--tol", "0.5", *FAST]) == 0
    assert read_csv(out / "trace.csv")[0] == ["iteration", "distance", "ratio", "lambda"]
    assert (out / "mass.csv").exists() and any((out / "clouds").iterdir())


def test_oracle_subcommand(tmp_path):
    out = tmp_path / "o"
    assert main(["oracle", "--out", str(out), "--ts", "1.0", "--xs", "1.0"]) == 0
    row = read_csv(out / "oracle.csv")[1]
    assert float(row[2]) == pytest.approx(0.6826894921370859, abs=1e-12)


def test_validate_exit_code(tmp_path):
    assert main(["validate", "--out", str(tmp_path / "v"), "--paths", "2000"]) == 0


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"kind": "survival", "domain": {"kind": "half_space", "normal": [1.0]}, "paths": -4}))
    assert main(["survival", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "paths" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_config_kind_mismatch(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"kind": "gradient", "domain": {"kind": "half_space", "normal": [1.0]}}))
    assert main(["survival", "--config", str(cfg)]) == 2
    assert "kind" in capsys.readouterr().err
