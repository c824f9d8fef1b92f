import csv
import hashlib
import json

import pytest

from unitary_mesh.cli import main
from unitary_mesh.experiments import config_from_flat

RUN = ["run", "--arch", "mplc", "--n", "4", "--m", "5", "--trials", "2", "--seed", "7"]


def run_dir(tmp_path, name="r", extra=()):
    out = tmp_path / name
    assert main(RUN + ["--out", str(out), *extra]) == 0
    return out


def test_run_writes_artifacts(tmp_path):
    out = run_dir(tmp_path)
    assert {p.name for p in out.iterdir()} == {"traces.csv", "summary.json", "manifest.json"}
    rows = list(csv.reader((out / "traces.csv").open()))
    assert rows[0] == ["trial", "iteration", "loss"]
    assert {r[0] for r in rows[1:]} == {"0", "1"}
    manifest = json.loads((out / "manifest.json").read_text())
    for entry in manifest["files"]:
        assert hashlib.sha256((out / entry["path"]).read_bytes()).hexdigest() == entry["sha256"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"] == manifest["config"]
    assert summary["config"]["seed"] == 7
    assert set(summary["per_iteration"]) == {"min", "q25", "median", "q75", "max"}
    assert config_from_flat(manifest["config"]).n_layers == 5


def test_rerun_byte_identical(tmp_path):
    a = run_dir(tmp_path, "a")
    b = run_dir(tmp_path, "b")
    assert (a / "traces.csv").read_bytes() == (b / "traces.csv").read_bytes()


def test_odd_clements_rejected(tmp_path, capsys):
    code = main(["run", "--arch", "clements", "--n", "7", "--m", "7", "--seed", "1", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "n_modes must be even" in capsys.readouterr().err


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"arch": "mplc", "n": 4, "m": 6, "trials": 1, "seed": 3, "max_iterations": 5}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--m", "5", "--out", str(out)]) == 0
    echo = json.loads((out / "summary.json").read_text())["config"]
    assert echo["m"] == 5 and echo["max_iterations"] == 5 and echo["seed"] == 3


def test_malformed_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"n": 4,\n "m": }')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bad.json:2:" in capsys.readouterr().err
    cfg.write_text('{"n": 4, "colour": 1}')
    assert main(["run", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")]) == 2
    assert "colour" in capsys.readouterr().err


def test_missing_seed_is_drawn_and_recorded(tmp_path):
    out = tmp_path / "s"
    assert main(["run", "--n", "2", "--m", "2", "--trials", "1", "--out", str(out)]) == 0
    assert isinstance(json.loads((out / "manifest.json").read_text())["config"]["seed"], int)


def test_landscape(tmp_path):
    out = run_dir(tmp_path, extra=["--record-history", "true"])
    assert main(["landscape", str(out), "--trial", "1", "--resolution", "7"]) == 0
    data = json.loads((out / "trajectory.json").read_text())
    a = data["axes"]
    dot = sum(x * y for x, y in zip(a[0], a[1]))
    assert abs(dot) < 1e-10
    assert sum(data["explained_variance"]) <= 1 + 1e-12
    assert len(data["grid"]["values"]) == 49
    assert main(["landscape", str(out), "--resolution", "0"]) == 2


def test_landscape_without_history(tmp_path, capsys):
    out = run_dir(tmp_path)
    assert main(["landscape", str(out)]) == 2
    assert "--record-history" in capsys.readouterr().err


def test_sweep(tmp_path):
    out = tmp_path / "sw"
    args = ["sweep", "--n", "4", "--m", "5", "--loss", "phase_insensitive", "--trials", "2", "--seed", "2", "--out", str(out)]
    assert main(args) == 0
    names = {p.name for p in out.iterdir()}
    assert len([n for n in names if n.endswith("summary.json")]) == 5
    table = json.loads((out / "sweep.json").read_text())
    assert [r["label"] for r in table["rows"]] == ["2^-6", "2^-9", "2^-12", "2^-15", "2^-18"]
    med = [r["final_median"] for r in table["rows"]]
    inversions = sum(b > a for a, b in zip(med, med[1:]))
    assert inversions <= 1
    assert main(["sweep", "--n", "4", "--m", "5", "--seed", "1", "--deltas", "", "--out", str(out)]) == 2


def test_jobs_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("UNITARY_MESH_JOBS", "2")
    out = run_dir(tmp_path, "j", extra=["--jobs", "1"])
    monkeypatch.delenv("UNITARY_MESH_JOBS")
    ref = run_dir(tmp_path, "k")
    assert (out / "traces.csv").read_bytes() == (ref / "traces.csv").read_bytes()
    monkeypatch.setenv("UNITARY_MESH_JOBS", "many")
    assert main(RUN + ["--out", str(tmp_path / "z")]) == 2


def test_check(capsys):
    assert main(["check", "--trials", "1"]) == 0
    assert "all checks passed" in capsys.readouterr().out


def test_usage_errors():
    assert main([]) == 2
    assert main(["run"]) == 2
    assert main(["run", "--n", "x", "--out", "o"]) == 2
