import copy
import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from singular_mfg import cli
from singular_mfg.config import RunConfig, load, resolve
from singular_mfg.errors import ValidationError
from singular_mfg.grid import load_field

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = {
    "schema_version": 1,
    "problem": "time",
    "grid": {"dim": 1, "n": 32},
    "model": {"V": {"const": 0.5, "fourier": [[1, 0.5, 0.0]]}, "gamma": 1.2},
    "coupling": {"alpha": 1.5, "eps_schedule": [0.1, 0.01]},
    "data": {"uT": {"fourier": [[1, 0.1, 0.0]]}, "m0": {"const": 1.0, "fourier": [[1, 0.5, 0.0]]}, "T": 0.5},
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def test_resolve_fills_defaults():
    cfg = resolve(copy.deepcopy(BASE))
    assert cfg["coupling"]["eps"] == 0.01
    assert cfg["data"]["nt"] == 16
    assert cfg["probe"]["moll_width"] == 4 / 32
    assert cfg["simulate"]["bandwidth"] == 2 / 32
    assert cfg["solver"]["theta"] == 0.5 and cfg["seed"] == 0
    # resolving the resolved config is a fixed point
    assert resolve(copy.deepcopy(cfg)) == cfg


def test_run_config_view():
    rc = RunConfig.from_resolved(resolve(copy.deepcopy(BASE)))
    assert rc.grid.n == 32 and rc.T == 0.5 and rc.nt == 16 and rc.schedule == [0.1, 0.01]
    np.testing.assert_allclose(rc.field("m0"), 1 + 0.5 * np.cos(2 * np.pi * rc.grid.coords[0]))


@pytest.mark.parametrize(
    "patch",
    [
        {"coupling": {"alpha": -1.0, "eps": 0.1}},
        {"coupling": {"alpha": 1.0}},
        {"coupling": {"alpha": 1.0, "eps_schedule": [0.01, 0.1]}},
        {"grid": {"dim": 3, "n": 16}},
        {"grid": {"dim": 1, "n": 15}},
        {"schema_version": 2},
        {"extra_key": 1},
        {"data": {"m0": {"const": -1.0}}},
        {"probe": {"x0": [0.1, 0.2]}},
        {"model": {"gamma": 1.0}},
    ],
)
def test_resolve_rejects(patch):
    cfg = copy.deepcopy(BASE)
    cfg.update(patch)
    with pytest.raises(ValidationError):
        resolve(cfg)


def test_load_errors(tmp_path):
    with pytest.raises(ValidationError):
        load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ValidationError):
        load(tmp_path / "bad.json")


def test_shipped_configs_resolve():
    for p in sorted(CONFIGS.glob("*.json")):
        load(p)


def test_stationary_decoupled(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.run(["stationary", "--config", str(CONFIGS / "decoupled.json"), "--out", str(out)]) == 0
    _, u, _ = load_field(out / "u.fld")
    _, m, _ = load_field(out / "m.fld")
    assert np.max(np.abs(u)) < 1e-14
    np.testing.assert_allclose(m, 1.0, atol=1e-12)
    rep = json.loads((out / "report.json").read_text())
    assert rep["passed"] and rep["meta"]["hbar"] == pytest.approx(1.0)
    man = json.loads((out / "manifest.json").read_text())
    names = {f["path"] for f in man["files"]}
    assert {"resolved_config.json", "u.fld", "m.fld", "report.json", "solution.json"} <= names
    assert any(n.endswith(".csv") for n in names)


def test_negative_alpha_exits_2(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["coupling"]["alpha"] = -1.0
    code = cli.run(["evolve", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")])
    assert code == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert re.fullmatch(r"singular-mfg: error kind=validation code=2 msg=.+", err[-1])


def test_missing_config_exits_2(tmp_path, capsys):
    assert cli.run(["gates", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 2


def test_nonconvergence_exits_3(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["solver"] = {"max_iters": 1}
    assert cli.run(["evolve", "--config", str(write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == 3
    assert "kind=nonconvergence code=3" in capsys.readouterr().err


def test_sweep_verify_probe_simulate(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["coupling"]["eps_schedule"] = [0.1, 0.01, 0.001]
    cfg["probe"] = {"x0": [0.3], "tau": 0.125}
    cfg["simulate"] = {"particles": 2000, "x0": [[0.25]]}
    sweep_out = tmp_path / "sweep"
    assert cli.run(["sweep-eps", "--config", str(write(tmp_path, cfg)), "--out", str(sweep_out)]) == 0
    stages = sorted(p.name for p in sweep_out.iterdir() if p.is_dir())
    assert stages == ["stage_00_eps_1e-01", "stage_01_eps_1e-02", "stage_02_eps_1e-03"]
    limit = json.loads((sweep_out / "limit_report.json").read_text())
    assert len(limit["cauchy"]) == 2
    assert (sweep_out / "schedule_report.json").exists()

    cfg["input_dir"] = str(sweep_out)
    ver = tmp_path / "verify"
    assert cli.run(["verify", "--config", str(write(tmp_path, cfg, "v.json")), "--out", str(ver)]) == 0
    assert json.loads((ver / "schedule_report.json").read_text())["entries"]

    cfg["input_dir"] = str(sweep_out / stages[-1])
    cfg["coupling"] = {"alpha": 1.5, "eps": 0.001}
    path = write(tmp_path, cfg, "p.json")
    probe = tmp_path / "probe"
    assert cli.run(["probe", "--config", str(path), "--out", str(probe), "--moll-width", "0.125"]) == 0
    rep = json.loads((probe / "report.json").read_text())
    assert rep["meta"]["moll_width"] == 0.125
    assert load_field(probe / "rho.fld")[1].shape == (13, 32)

    sim = tmp_path / "sim"
    assert cli.run(["simulate", "--config", str(path), "--out", str(sim), "--particles", "3000", "--t", "0.25"]) == 0
    rep = json.loads((sim / "report.json").read_text())
    assert rep["meta"]["particles"] == 3000
    assert any(e["id"].startswith("density_l1") for e in rep["entries"])


def test_verify_needs_input_dir(tmp_path, capsys):
    assert cli.run(["verify", "--config", str(write(tmp_path, BASE)), "--out", str(tmp_path / "o")]) == 2


def test_gates_examples(tmp_path, capsys):
    cfg = copy.deepcopy(BASE)
    cfg["grid"] = {"dim": 2, "n": 16}
    cfg["coupling"] = {"alpha": 0.5, "eps": 0.1}
    cfg["data"] = {"T": 0.5}
    cfg["verify"] = {"samples": {"n_x": 4, "n_p": 16, "n_triples": 200}}
    cfg["probe"] = {"x0": [0.5, 0.5]}
    rc = RunConfig.from_resolved(resolve(copy.deepcopy(cfg)))
    g = cli.gate_report(rc)
    rows = {r["assumption"]: r for r in g["rows"]}
    assert rows["A4"]["passed"] and rows["A5"]["passed"] and rows["A5"]["detail"]["alpha_bar"] == 0.0
    assert g["stationary_hypotheses"] and g["time_hypotheses"]

    cfg["model"]["gamma"] = 1.5
    rc = RunConfig.from_resolved(resolve(copy.deepcopy(cfg)))
    g = cli.gate_report(rc)
    assert not g["time_hypotheses"] and g["violations"]["time"] == ["A4"]

    out = tmp_path / "g"
    assert cli.run(["gates", "--config", str(write(tmp_path, cfg)), "--out", str(out)]) == 0
    table = (out / "gates.txt").read_text()
    for name in ("A1", "A2", "A3", "A4", "A5", "sample box"):
        assert name in table


def test_seed_flag_is_recorded(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.run(["stationary", "--config", str(CONFIGS / "decoupled.json"), "--out", str(out), "--seed", "7"]) == 0
    assert json.loads((out / "resolved_config.json").read_text())["seed"] == 7


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "singular_mfg", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "sweep-eps" in res.stdout
