import csv
import io
import json

import pytest

from pspin.cli import main


def run(args):
    out, err = io.StringIO(), io.StringIO()
    code = main(args, out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def test_beta_crit_json_roundtrip(tmp_path):
    first = tmp_path / "a.json"
    code, _, _ = run(["beta-crit", "--p", "2", "-o", str(first)])
    assert code == 0
    doc = json.loads(first.read_text())
    assert set(doc) >= {"config", "results", "meta"}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(doc["config"]))
    second = tmp_path / "b.json"
    assert run(["beta-crit", "--config", str(cfg), "-o", str(second)])[0] == 0
    assert json.loads(second.read_text())["results"] == doc["results"]


def test_output_is_create_or_fail(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("keep")
    code, _, err = run(["gt-bound", "--p", "3", "--beta", "1", "--v", "0.5", "-o", str(path)])
    assert code == 2 and path.read_text() == "keep"
    assert run(["gt-bound", "--p", "3", "--beta", "1", "--v", "0.5", "-o", str(path), "--force"])[0] == 0


@pytest.mark.parametrize("args", [
    ["free-energy", "--kind", "L", "--p", "3", "--n", "6", "--beta", "1", "--seed", "1"],
    ["free-energy", "--p", "3", "--n", "40", "--beta", "1", "--seed", "1"],
    ["tv", "--p", "3", "--n", "8", "--beta", "-1", "--seed", "1"],
    ["rho", "--p", "2"],
])
def test_configuration_errors(args):
    assert run(args)[0] == 2


def test_numerical_failure_exit_code():
    assert run(["rho", "--p", "3", "--beta", "1.5", "--s", "0.5", "--quad-nodes", "4"])[0] == 3


def test_tv_zero_signal():
    code, out, _ = run(["tv", "--p", "3", "--n", "8", "--beta", "0", "--replicas", "8", "--seed", "3"])
    assert code == 0
    rows = json.loads(out)["results"]
    assert all(r["d_tv"] == 0.0 for r in rows)


def test_csv_with_sidecar(tmp_path):
    path = tmp_path / "af.csv"
    code, _, _ = run(["free-energy", "--kind", "AF", "--p", "3", "--n", "6", "--beta", "0.8",
                      "--replicas", "4", "--seed", "2", "--format", "csv", "-o", str(path)])
    assert code == 0
    raw = path.read_bytes()
    assert b"\r\n" in raw
    rows = list(csv.DictReader(io.StringIO(raw.decode())))
    assert len(rows) >= 1
    meta = json.loads((tmp_path / "af.csv.meta.json").read_text())
    assert meta["meta"]["seed"] == 2


def test_random_seed_is_recorded():
    code, out, err = run(["free-energy", "--p", "3", "--n", "5", "--beta", "1", "--replicas", "2"])
    assert code == 0
    seed = json.loads(out)["meta"]["seed"]
    assert str(seed) in err


def test_seeded_runs_are_identical():
    args = ["overlap", "--p", "3", "--n", "6", "--beta", "1", "--replicas", "2", "--sweeps", "300",
            "--burnin", "50", "--seed", "9"]
    a = json.loads(run(args)[1])["results"]
    b = json.loads(run(args + ["--threads", "2"])[1])["results"]
    assert a == b


def test_selftest_passes():
    code, out, _ = run(["test"])
    assert code == 0
    assert "FAIL" not in out


def test_selftest_coarse_quadrature_fails():
    code, out, _ = run(["test", "--quad-nodes", "4"])
    assert code != 0
    assert "rho-identity" in out and "FAIL" in out


def test_selftest_corrupt_cache(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    code, out, _ = run(["test", "--cache-file", str(bad)])
    assert code != 0
    assert "cache integrity" in out
