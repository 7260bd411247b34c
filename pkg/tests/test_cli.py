import csv
import io
import json
from pathlib import Path

import pytest

from qmeas.cli import EXIT_CONDITION, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, SWEEP_COLUMNS, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

QND = """
model = "qnd"
[params]
dim = 3
eps = 0.2
[[states]]
name = "a"
kind = "random"
seed = 1
[[states]]
name = "b"
kind = "random"
seed = 2
[output]
path = "{out}"
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_verify_ok_writes_report(tmp_path, capsys):
    cfg = _write(tmp_path, QND.format(out=tmp_path / "rep"))
    assert main(["verify", "-c", cfg]) == EXIT_OK
    doc = json.loads((tmp_path / "rep.json").read_text())
    assert doc["schema"] == "qmeas-report/1"
    assert doc["status"] == "pass"
    assert doc["points"][0]["tolerances"]["conservation"] > 0
    assert doc["points"][0]["certificate"]["schema"] == "qmeas-cert/1"
    rows = list(csv.reader((tmp_path / "rep.outcomes.csv").open()))
    assert rows[0][:4] == ["model", "param_name", "param_value", "state_pair"]
    assert "verify: ok" in capsys.readouterr().out


def test_verify_reports_are_byte_identical(tmp_path):
    a = _write(tmp_path, QND.format(out=tmp_path / "one"), "a.toml")
    b = _write(tmp_path, QND.format(out=tmp_path / "two"), "b.toml")
    assert main(["verify", "-c", a]) == EXIT_OK
    assert main(["verify", "-c", b]) == EXIT_OK
    assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()


def test_expectation_mismatch_exits_two(capsys):
    assert main(["verify", "--model", "two_level", "--expect", "ban=fail,conservation=pass"]) == EXIT_OK
    assert main(["verify", "--model", "two_level", "--expect", "ban=pass"]) == EXIT_CONDITION
    assert "FAIL" in capsys.readouterr().out


@pytest.mark.parametrize("text", [
    "model = \n",
    'model = "qnd"\nunknown = 1\n',
    'model = "qnd"\n[[states]]\nname = "a"\nkind = "random"\n',
    'model = "qnd"\n[params]\neps = "high"\n',
])
def test_malformed_configs_exit_64(tmp_path, text):
    assert main(["verify", "-c", _write(tmp_path, text)]) == EXIT_USAGE


def test_usage_errors_exit_64(tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["verify"]) == EXIT_USAGE
    assert main(["verify", "-c", str(tmp_path / "missing.toml")]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_bad_thread_env_exits_64(monkeypatch):
    monkeypatch.setenv("QMEAS_THREADS", "many")
    assert main(["verify", "--model", "qnd"]) == EXIT_USAGE
    monkeypatch.setenv("QMEAS_THREADS", "0")
    assert main(["verify", "--model", "qnd"]) == EXIT_USAGE


def test_internal_error_exits_one(monkeypatch):
    from qmeas import pipeline

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(pipeline, "evaluate_point", boom)
    assert main(["verify", "--model", "qnd"]) == EXIT_INTERNAL


def test_sweep_csv_columns_and_threads(tmp_path, monkeypatch):
    out1, out3 = tmp_path / "s1.csv", tmp_path / "s3.csv"
    args = ["sweep", "--model", "photon_counting", "--sweep", "gamma_t=0.5,1,2"]
    monkeypatch.setenv("QMEAS_THREADS", "1")
    assert main(args + ["-o", str(out1)]) == EXIT_OK
    monkeypatch.setenv("QMEAS_THREADS", "3")
    assert main(args + ["-o", str(out3)]) == EXIT_OK
    assert out1.read_bytes() == out3.read_bytes()
    rows = list(csv.DictReader(io.StringIO(out1.read_text())))
    assert tuple(rows[0].keys()) == SWEEP_COLUMNS
    assert [r["param_value"] for r in rows] == ["0.5", "1", "2"]
    for r in rows:
        assert abs(float(r["residual_nats"])) < 1e-9
        assert r["ban_ok"] == "true"


def test_sweep_to_stdout(capsys):
    assert main(["sweep", "--model", "qnd"]) == EXIT_OK
    head = capsys.readouterr().out.splitlines()[0]
    assert head == ",".join(SWEEP_COLUMNS)


@pytest.mark.parametrize("name", ["qnd", "two_level", "photon_counting"])
def test_shipped_configs_verify(name, tmp_path):
    assert main(["verify", "-c", str(CONFIGS / f"{name}.toml"), "-o", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / f"{name}.json").exists()
