import csv
import json
import pathlib

import numpy as np
import pytest

from epmlab import cli
from epmlab.errors import InternalInvariantError

CONFIGS = pathlib.Path(__file__).resolve().parent.parent / "configs"

SMALL = {"m": 64, "epsilon": 0.5, "h": 0.5, "P": [0.3], "potential": "cosine",
         "T": 20000, "n_max": 15, "competitors": 5, "seed": 4}


def _cfg(tmp_path, **kw):
    d = dict(SMALL)
    d.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return str(p)


def _run(*args):
    return cli.main([str(a) for a in args])


def test_solve_outputs(tmp_path):
    out = tmp_path / "o"
    assert _run("solve", "--config", _cfg(tmp_path), "--out", out) == 0
    s = json.loads((out / "summary.json").read_text())
    for key in ("lambda", "Lambda", "residual", "iterations", "lambda2_modulus", "gap",
                "theta_l1_defect", "q_rowsum_defect"):
        assert key in s
    rows = list(csv.DictReader(open(out / "fields.csv")))
    assert len(rows) == 64 and set(rows[0]) == {"i0", "x0", "phi", "phibar", "theta"}
    assert sum(float(r["theta"]) for r in rows) == pytest.approx(1.0)
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and man["versions"]["backend"] in ("compiled", "python")
    assert "timestamp" not in json.dumps(man)


def test_free_correlate_fourier_law(tmp_path):
    out = tmp_path / "o"
    cfg = _cfg(tmp_path, P=[0.0], potential="zero", epsilon=0.3, T=0,
               observables={"f": {"terms": [{"k": [1], "cos": 1.0}]}, "g": {"terms": [{"k": [1], "cos": 1.0}]}})
    assert _run("correlate", "--config", cfg, "--out", out) == 0
    rows = list(csv.DictReader(open(out / "correlation.csv")))
    C = np.array([float(r["exact"]) for r in rows])
    rate = np.exp(-2 * np.pi ** 2 * 0.3 * 0.25)
    assert np.allclose(C, 0.5 * rate ** np.arange(C.size), rtol=1e-10, atol=1e-16)
    assert rows[0]["empirical"] == ""


@pytest.mark.parametrize("cmd", cli.COMMANDS)
def test_every_command_runs(tmp_path, cmd):
    out = tmp_path / "o"
    assert _run(cmd, "--config", _cfg(tmp_path), "--out", out) == 0
    assert (out / "manifest.json").exists()


@pytest.mark.parametrize("patch,field", [
    ({"h": -1}, "h"), ({"epsilon": "x"}, "epsilon"), ({"m": 8}, "m"), ({"P": [0.1, 0.2], "n": 1}, "P"),
    ({"direction": "sideways"}, "direction"), ({"cutoff_sigmas": 3}, "cutoff_sigmas"),
    ({"potential": {"table": [1, 2]}}, "potential"),
])
def test_bad_config_names_field(tmp_path, capsys, patch, field):
    assert _run("solve", "--config", _cfg(tmp_path, **patch), "--out", tmp_path / "o") == 1
    assert f"'{field}'" in capsys.readouterr().err


def test_unknown_key_and_missing_file(tmp_path, capsys):
    assert _run("solve", "--config", _cfg(tmp_path, bogus=1), "--out", tmp_path / "o") == 1
    assert "bogus" in capsys.readouterr().err
    assert _run("solve", "--config", tmp_path / "none.json", "--out", tmp_path / "o") == 1
    (tmp_path / "bad.json").write_text("{")
    assert _run("solve", "--config", tmp_path / "bad.json", "--out", tmp_path / "o") == 1


def test_nonconvergence_exit_code(tmp_path):
    out = tmp_path / "o"
    assert _run("solve", "--config", _cfg(tmp_path, max_iter=2), "--out", out) == 2
    s = json.loads((out / "summary.json").read_text())
    assert s["converged"] is False


def test_internal_error_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise InternalInvariantError("lost positivity")
    monkeypatch.setattr(cli, "solve", boom)
    assert _run("solve", "--config", _cfg(tmp_path), "--out", tmp_path / "o") == 3


def test_reuse(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    up, fresh, reused = tmp_path / "up", tmp_path / "fresh", tmp_path / "reused"
    assert _run("solve", "--config", cfg, "--out", up) == 0
    assert _run("correlate", "--config", cfg, "--out", fresh) == 0
    assert _run("correlate", "--config", cfg, "--out", reused, "--reuse", up) == 0
    a = np.loadtxt(fresh / "correlation.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(reused / "correlation.csv", delimiter=",", skiprows=1)
    assert np.allclose(a[:, 1], b[:, 1], rtol=1e-9, atol=1e-14)
    (up / "fields.csv").unlink()
    assert _run("gap", "--config", cfg, "--out", reused, "--reuse", up) == 1
    assert "fields.csv" in capsys.readouterr().err


def test_seed_override_changes_trajectory(tmp_path):
    cfg = _cfg(tmp_path, T=1000)
    _run("simulate", "--config", cfg, "--out", tmp_path / "a", "--seed", 1)
    _run("simulate", "--config", cfg, "--out", tmp_path / "b", "--seed", 2)
    assert (tmp_path / "a/trajectory.csv").read_bytes() != (tmp_path / "b/trajectory.csv").read_bytes()


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_validate(name):
    cli.RunConfig.from_dict(json.loads((CONFIGS / name).read_text()))
