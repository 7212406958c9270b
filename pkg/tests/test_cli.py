import json
import subprocess
import sys

import pytest

from nullrec.cli import ConfigError, list_catalog, load_config, main


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg))
    return p


def run(tmp_path, cfg, *extra, out="out"):
    path = write(tmp_path, cfg)
    return main(["run", str(path), "--out", str(tmp_path / out), *extra])


def test_list_catalog(capsys):
    text = list_catalog()
    assert "oscillator" in text and "gaussian_bump" in text
    assert "|sigma_hat_sq|_1=" in text and "psi bounds=yes" in text
    assert text == list_catalog()
    assert main(["list-catalog"]) == 0
    assert "constant_psi" in capsys.readouterr().out


def test_missing_grid_is_exit_2(tmp_path, capsys):
    assert run(tmp_path, {"kind": "simulate"}) == 2
    assert "grid" in capsys.readouterr().err


def test_bad_json_reports_line(tmp_path, capsys):
    assert run(tmp_path, '{"kind": "simulate",\n "grid": }') == 2
    assert "line 2" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"kind": "nope", "grid": {"t_end": 1, "n_steps": 10}},
    {"kind": "simulate", "grid": {"t_end": 1, "n_steps": 0}},
    {"kind": "simulate", "grid": {"t_end": 1, "n_steps": 10}, "eps": [0.1, 0.2]},
    {"kind": "simulate", "grid": {"t_end": 1, "n_steps": 10}, "entry": {"name": "missing"}},
    {"kind": "simulate", "grid": {"t_end": 1, "n_steps": 10}, "y0": [1, 2, 3]},
    {"kind": "simulate", "grid": {"t_end": 1, "n_steps": 10}, "bogus": 1},
])
def test_invalid_configs_exit_2(tmp_path, cfg):
    assert run(tmp_path, cfg) == 2


def test_load_config_defaults_and_hash(tmp_path):
    p = write(tmp_path, {"kind": "simulate", "grid": {"t_end": 1, "n_steps": 10}})
    cfg, digest = load_config(p)
    assert cfg["entry"]["name"] == "oscillator" and cfg["n_paths"] == 1000 and len(digest) == 64
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, {"kind": "simulate", "grid": {"t0": 2, "t_end": 1, "n_steps": 10}}, "b.json"))


def test_oscillator_demo_artifact_is_deterministic(tmp_path, capsys):
    cfg = {"kind": "oscillator-demo", "grid": {"t_end": 6.283185307179586, "n_steps": 400},
           "options": {"sqrt_eps": 0.1, "sigma_l2": 100.0}, "seed": 5}
    assert run(tmp_path, cfg, out="a") == 0
    assert run(tmp_path, cfg, "--threads", "3", out="b") == 0
    a = (tmp_path / "a" / "oscillator_demo.csv").read_text()
    assert a == (tmp_path / "b" / "oscillator_demo.csv").read_text()
    assert "config_sha256=" in a and "seed=5" in a
    out = capsys.readouterr().out.strip().splitlines()
    assert json.loads(out[-1])["pass"] is True


def test_env_seed_override(tmp_path, monkeypatch):
    cfg = {"kind": "simulate", "grid": {"t_end": 0.1, "n_steps": 100}, "eps": [0.5]}
    assert run(tmp_path, cfg, out="a") == 0
    monkeypatch.setenv("NULLREC_SEED", "17")
    assert run(tmp_path, cfg, out="b") == 0
    b = (tmp_path / "b" / "trajectory.csv").read_text()
    assert "seed=17" in b
    assert b != (tmp_path / "a" / "trajectory.csv").read_text()


def test_verify_rate_report(tmp_path):
    cfg = {"kind": "verify-rate", "grid": {"t_end": 1, "n_steps": 10}, "eps": [0.4, 0.2, 0.1],
           "n_paths": 400, "seed": 1}
    code = run(tmp_path, cfg)
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "slope" in rep and rep["slope"] is not None
    assert code == (0 if rep["pass"] else 1)
    assert rep["provenance"]["seed"] == 1 and len(rep["provenance"]["config_sha256"]) == 64
    first = (tmp_path / "out" / "report.json").read_bytes()
    run(tmp_path, cfg, "--threads", "4")
    assert (tmp_path / "out" / "report.json").read_bytes() == first


def test_failing_check_exit_1(tmp_path, capsys):
    cfg = {"kind": "limit", "grid": {"t_end": 1, "n_steps": 20}, "tolerances": {"construction_gap": 0.0}}
    assert run(tmp_path, cfg) == 1
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["pass"] is False and summary["failures"] == ["construction_gap"]


def test_blow_up_exit_3(tmp_path, capsys):
    cfg = {"kind": "simulate", "grid": {"t_end": 10, "n_steps": 10_000}, "eps": [2.0],
           "entry": {"name": "gaussian_bump", "params": {"kappa": -1e308}}}
    assert run(tmp_path, cfg) == 3
    assert json.loads(capsys.readouterr().out.strip().splitlines()[-1])["error"] == "BlowUpError"


@pytest.mark.parametrize("kind, extra", [
    ("localtime", {"n_paths": 50}),
    ("limit", {}),
    ("verify-L1", {"eps": [0.4, 0.2], "n_paths": 50, "tolerances": {"limit": 10, "slope": 10}}),
    ("verify-reduction", {"eps": [0.4, 0.2], "n_paths": 50}),
    ("verify-char", {"eps": [0.2], "n_paths": 200}),
    ("verify-weak", {"eps": [0.4, 0.2], "n_paths": 100, "options": {"h_limit": 0.05, "h_inner": 0.005}}),
    ("verify-timechange", {"eps": [0.4, 0.2], "n_paths": 20, "entry": {"name": "gaussian_bump", "params": {"p": 0.5}}}),
])
def test_every_kind_runs(tmp_path, kind, extra):
    cfg = {"kind": kind, "grid": {"t_end": 1, "n_steps": 100}, **extra}
    code = run(tmp_path, cfg)
    assert code in (0, 1)
    files = list((tmp_path / "out").iterdir())
    assert files


def test_console_script_module_entry(tmp_path):
    res = subprocess.run([sys.executable, "-m", "nullrec.cli", "list-catalog"], capture_output=True, text=True)
    assert res.returncode == 0 and "drift_only" in res.stdout
