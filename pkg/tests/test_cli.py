import json
import math

from wmlab import io
from wmlab.cli import main


def test_simulate_rest_zero_energy(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nn = 64\nt_end = 1\n[state]\nkind = rest\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    header, rows = io.read_csv(out / "run_record.csv")
    assert header[:2] == ["t", "E"]
    assert all(float(r[1]) == 0.0 for r in rows)
    manifest = io.read_json(out / "manifest.json")
    assert manifest["command"] == "simulate" and manifest["resolution"]["n"] == 64
    assert json.loads(capsys.readouterr().out)["status"] == "ok"


def test_config_error_exit_two(tmp_path, capsys):
    assert main(["simulate", "--n", "100", "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["field"] == "run.n"
    assert main(["simulate", "--override", "run.foo=1", "--out", str(tmp_path / "p")]) == 2


def test_runtime_error_exit_one(tmp_path, capsys):
    cfg = tmp_path / "w.ini"
    cfg.write_text("[run]\nn = 128\nk = 1\n[state]\nkind = random\nenergy = 1\n"
                   "[target]\nkind = random\nenergy = 8\nwinding = 1\n")
    out = tmp_path / "w"
    code = main(["control-global", "--config", str(cfg), "--out", str(out),
                 "--override", "pipeline.eps_tilde=0.4"])
    assert code == 1
    err = io.read_json(out / "error.json")
    assert err["error"] == "winding_mismatch"
    capsys.readouterr()


def test_reruns_are_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["simulate", "--n", "64", "--t-end", "2", "--seed", "5",
                     "--out", str(out), "--override", "simulate.mode=damped"]) == 0
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir())
    assert "run_record.csv" in files
    for name in files:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name
    capsys.readouterr()


def test_out_env_var(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("WMLAB_OUT", str(tmp_path / "env"))
    assert main(["simulate", "--n", "64", "--t-end", "0.5"]) == 0
    assert (tmp_path / "env" / "simulate" / "manifest.json").exists()
    capsys.readouterr()


def test_hum_and_diagnose(tmp_path, capsys):
    out = tmp_path / "h"
    assert main(["hum", "--n", "64", "--out", str(out), "--override", "hum.n_max=8",
                 "--override", "hum.trials=4"]) == 0
    rep = io.read_json(out / "report.json")
    assert rep["optimality"]["passed"]
    sim = tmp_path / "s"
    assert main(["simulate", "--n", "64", "--t-end", str(3 * math.pi + 0.1), "--out", str(sim),
                 "--override", "simulate.mode=damped", "--override", "run.record_every=1"]) == 0
    diag = tmp_path / "d"
    assert main(["diagnose", "--n", "64", "--out", str(diag), "--override",
                 f"diagnose.trajectory={sim / 'trajectory.bin'}"]) == 0
    rep = io.read_json(diag / "report.json")
    assert rep["observability"]["ratio"] > 0
    capsys.readouterr()
