import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pairsirs import fastslow
from pairsirs.cli import main


def _read_csv(path):
    lines = path.read_text().splitlines()
    meta = json.loads(lines[0][2:])
    rows = list(csv.reader(lines[1:]))
    return meta, rows[0], np.array(rows[1:], dtype=float)


def test_integrate_slow_matches_closed_form(tmp_path):
    out = tmp_path / "slow.csv"
    rc = main(["integrate", "--system", "slow", "--S", "0.5", "--SS", "1", "--n", "4",
               "--tmax", "5", "--out", str(out)])
    assert rc == 0
    meta, header, data = _read_csv(out)
    assert header == ["tau", "S", "SS"]
    assert meta["artifact"] == "pairsirs" and meta["config"]["tmax"] == 5
    exact = fastslow.slow_solution((0.5, 1.0), data[:, 0], 4)
    assert np.max(np.abs(data[:, 1] - exact.S)) < 1e-8
    assert np.max(np.abs(data[:, 2] - exact.SS)) < 1e-8


def test_integrate_layer_from_c0_is_constant(tmp_path):
    out = tmp_path / "layer.csv"
    svg = tmp_path / "layer.svg"
    rc = main(["integrate", "--system", "layer", "--beta", "2", "--S", "0.6", "--I", "0",
               "--SS", "0.9", "--SI", "0", "--II", "0", "--tmax", "20", "--out", str(out),
               "--svg", str(svg)])
    assert rc == 0
    _, header, data = _read_csv(out)
    assert header == ["t", "S", "I", "SS", "SI", "II"]
    assert np.all(data[:, 1:] == data[0, 1:])
    assert "pairsirs" in svg.read_text()


def test_missing_flag_is_usage_error(tmp_path):
    out = tmp_path / "x.csv"
    rc = main(["integrate", "--system", "slow", "--S", "0.5", "--n", "4", "--tmax", "5",
               "--out", str(out)])
    assert rc == 2
    assert list(tmp_path.iterdir()) == []


def test_bad_system_and_domain_errors(tmp_path):
    assert main(["integrate", "--system", "fast", "--out", str(tmp_path / "a.csv")]) == 2
    rc = main(["integrate", "--system", "full", "--beta", "2", "--S", "0.5", "--I", "0.1",
               "--SS", "3", "--SI", "0.1", "--II", "0.1", "--tmax", "1",
               "--out", str(tmp_path / "b.csv")])
    assert rc == 2


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("integrate:\n  system: slow\n  S: 0.5\n  SS: 1.0\n  tmax: 2\n  n: 4\n")
    out = tmp_path / "o.csv"
    assert main(["integrate", "--config", str(cfg), "--tmax", "1", "--out", str(out)]) == 0
    meta, _, data = _read_csv(out)
    assert data[-1, 0] == pytest.approx(1.0)
    assert meta["config"]["S"] == 0.5


def test_singular_transversal_at_beta_two(tmp_path):
    rc = main(["singular", "--beta", "2", "--n", "4", "--out-dir", str(tmp_path)])
    assert rc == 0
    verdict = json.loads((tmp_path / "verdict.json").read_text())
    assert verdict["transversal"] is True
    assert verdict["metadata"]["version"]
    assert (tmp_path / "interval.csv").exists() and (tmp_path / "interval.svg").exists()


def test_singular_below_threshold(tmp_path):
    assert main(["singular", "--beta", "0.4", "--n", "4", "--out-dir", str(tmp_path)]) == 2


def test_hopf_empty_slice_and_bad_resolution(tmp_path):
    rc = main(["hopf", "--axes", "n,beta", "--epsilon", "0.25", "--x-range", "3", "6",
               "--y-range", "0.1", "15", "--resolution", "30", "--out-dir", str(tmp_path)])
    assert rc == 0
    assert json.loads((tmp_path / "hopf_points.json").read_text())["hopf_points"] == []
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["limit_cycle_side"] == 0
    rc = main(["hopf", "--n", "4", "--x-range", "0", "15", "--y-range", "0.001", "0.25",
               "--resolution", "1", "--out-dir", str(tmp_path / "r1")])
    assert rc == 2


def test_netsim_deterministic_reruns(tmp_path):
    args = ["netsim", "--N", "10000", "--n", "4", "--beta", "2", "--replicas", "2", "--seed",
            "42", "--tmax", "4", "--dt", "0.5"]
    assert main(args + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(args + ["--out-dir", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "ensemble.json").read_text())
    b = json.loads((tmp_path / "b" / "ensemble.json").read_text())
    a["metadata"]["config"].pop("out_dir")
    b["metadata"]["config"].pop("out_dir")
    assert a == b


def test_netsim_beta_zero_and_odd_stubs(tmp_path):
    rc = main(["netsim", "--N", "500", "--n", "4", "--beta", "0", "--replicas", "1", "--tmax",
               "40", "--dt", "1", "--records", "--out-dir", str(tmp_path)])
    assert rc == 0
    _, header, data = _read_csv(tmp_path / "replica_0000.csv")
    assert data[-1, header.index("I")] == 0
    assert main(["netsim", "--N", "11", "--n", "3", "--beta", "1", "--replicas", "1",
                 "--out-dir", str(tmp_path / "odd")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pairsirs", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "pairsirs" in res.stdout
