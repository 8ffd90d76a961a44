from __future__ import annotations

import csv
import json

import numpy as np
import pytest
import yaml

from hrmsm.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from hrmsm.config import ConfigError, load_config
from hrmsm.simulation import builtin_config


def _config(tmp_path, name="run.yaml", **changes):
    cfg = yaml.safe_load(builtin_config("reference.yaml").read_text())
    cfg.update(
        simulate={"n": 300},
        monte_carlo={"M": 1000, "M_aug": 5, "M_oracle": 4000},
        bootstrap={"B": 4, "alpha": 0.1, "estimator": "iptw"},
    )
    for key, value in changes.items():
        if value is None:
            cfg.pop(key, None)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


def _run(*args):
    return main([str(a) for a in args])


def test_simulate_writes_panel_oracle_manifest(tmp_path):
    out = tmp_path / "out"
    assert _run("simulate", "--config", _config(tmp_path), "--out", out) == EXIT_OK
    for name in ("panel.csv", "schema.yaml", "oracle.json", "oracle.txt", "manifest.json"):
        assert (out / name).exists()
    oracle = json.loads((out / "oracle.json").read_text())
    assert len(oracle["beta"]) == len(oracle["se"]) == 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"panel.csv", "schema.yaml", "oracle.json", "oracle.txt"}
    assert manifest["seed"] == 20240611


def test_same_seed_is_byte_identical_across_threads(tmp_path):
    cfg = _config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("simulate", "--config", cfg, "--out", a, "--threads", 1) == EXIT_OK
    assert _run("simulate", "--config", cfg, "--out", b, "--threads", 3) == EXIT_OK
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name
    c = tmp_path / "c"
    _run("simulate", "--config", cfg, "--out", c, "--seed", 5)
    assert (c / "panel.csv").read_bytes() != (a / "panel.csv").read_bytes()


def test_malformed_config_names_key(tmp_path, capsys):
    cfg = _config(tmp_path, msm={"mode": "pooled", "link": "identity", "terms": ["const", "a_lag:x"]})
    assert _run("estimate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "msm.terms[1]" in capsys.readouterr().err
    cfg = _config(tmp_path, "v.yaml", config_version=7)
    assert _run("estimate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "config_version" in capsys.readouterr().err
    cfg = _config(tmp_path, "u.yaml", colour="blue")
    assert _run("estimate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "colour" in capsys.readouterr().err


def test_missing_files_are_io_errors(tmp_path):
    assert _run("estimate", "--config", tmp_path / "nope.yaml", "--out", tmp_path / "o") == EXIT_IO
    cfg = _config(tmp_path, data={"path": "absent.csv", "schema": {"covariates": ["W"]}}, dgp=None, oracle=None)
    assert _run("estimate", "--config", cfg, "--out", tmp_path / "o") == EXIT_IO


def test_estimate_three_estimators(tmp_path):
    out = tmp_path / "est"
    assert _run("estimate", "--config", _config(tmp_path), "--out", out) == EXIT_OK
    for est in ("iptw", "gcomp", "dr"):
        rep = json.loads((out / f"report_{est}.json").read_text())
        assert len(rep["beta"]) == 4
    agree = json.loads((out / "agreement.json").read_text())
    assert set(agree) == {"iptw-gcomp", "iptw-dr", "gcomp-dr"}
    assert max(agree.values()) < 0.5
    with open(out / "weights.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 300 * 8


def test_estimate_from_csv_panel(tmp_path):
    sim = tmp_path / "sim"
    _run("simulate", "--config", _config(tmp_path), "--out", sim)
    schema = yaml.safe_load((sim / "schema.yaml").read_text())
    cfg = _config(tmp_path, "csv.yaml", dgp=None, simulate=None, oracle=None, estimators=["iptw"],
                  data={"path": "sim/panel.csv", "schema": schema})
    out = tmp_path / "est"
    assert _run("estimate", "--config", cfg, "--out", out) == EXIT_OK
    direct = tmp_path / "direct"
    _run("estimate", "--config", _config(tmp_path, "d.yaml", estimators=["iptw"]), "--out", direct)
    a = json.loads((out / "report_iptw.json").read_text())["beta"]
    b = json.loads((direct / "report_iptw.json").read_text())["beta"]
    np.testing.assert_array_equal(a, b)


def test_stratified_report_rows(tmp_path):
    cfg = _config(tmp_path, msm={"mode": "stratified", "link": "identity", "terms": ["const", "a_lag:0"]},
                  estimators=["iptw"])
    out = tmp_path / "s"
    assert _run("estimate", "--config", cfg, "--out", out) == EXIT_OK
    rep = json.loads((out / "report_iptw.json").read_text())
    assert len(rep["beta"]) == len(rep["times"]) == 8


def test_s52_config_report_has_seven_coefficients(tmp_path):
    cfg = yaml.safe_load(builtin_config("synthetic52.yaml").read_text())
    cfg["estimators"] = ["iptw"]
    path = tmp_path / "s52.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "s52"
    assert _run("estimate", "--config", path, "--out", out) == EXIT_OK
    rep = json.loads((out / "report_iptw.json").read_text())
    assert len(rep["beta"]) == 7 and rep["times"] == list(range(3, 71))
    assert _run("effect-curve", "--config", path, "--report", out / "report_iptw.json", "--out", out) == EXIT_OK
    with open(out / "effect_curve.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 68


def test_effect_curve_needs_time_terms(tmp_path, capsys):
    cfg = _config(tmp_path, estimators=["iptw"])
    out = tmp_path / "e"
    _run("estimate", "--config", cfg, "--out", out)
    assert _run("effect-curve", "--config", cfg, "--report", out / "report_iptw.json",
                "--exposure", "a_lag:0", "--out", out) == EXIT_CONFIG
    assert "time" in capsys.readouterr().err


def test_bootstrap_command(tmp_path):
    out = tmp_path / "b"
    assert _run("bootstrap", "--config", _config(tmp_path), "--out", out) == EXIT_OK
    res = json.loads((out / "bootstrap_iptw.json").read_text())
    assert res["B"] == 4 and len(res["coefficients"]) == 4
    assert "too small" in (out / "bootstrap_iptw.txt").read_text()


def test_diagnose_randomized_and_bad_sweep(tmp_path, capsys):
    cfg = _config(tmp_path, dgp="randomized", simulate={"n": 2000})
    out = tmp_path / "d"
    assert _run("diagnose", "--config", cfg, "--out", out) == EXIT_OK
    sweep = json.loads((out / "diagnose.json").read_text())["sweep"]
    assert [r["s"] for r in sweep] == [1, 2, 3, 5, 8]
    assert all(r["ess_fraction"] > 0.95 for r in sweep)
    bad = _config(tmp_path, "bad.yaml", diagnose={"s_values": [1, 11]})
    assert _run("diagnose", "--config", bad, "--out", out) == EXIT_CONFIG
    assert "s_values" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path):
    cfg = _config(tmp_path, estimators=["dr"],
                  msm={"mode": "pooled", "link": "identity", "terms": ["const", "a_lag:0", "a_lag:0"]})
    assert _run("estimate", "--config", cfg, "--out", tmp_path / "n") == EXIT_NUMERIC


def test_config_requirements(tmp_path):
    with pytest.raises(ConfigError, match="^q:"):
        load_config(_config(tmp_path, q=None))
    with pytest.raises(ConfigError, match="treatment.numerator"):
        load_config(_config(tmp_path, treatment={"terms": ["const"], "style": "stabilized"}))
    cfg = load_config(_config(tmp_path, window={"s": 3, "targets": {"from": 4, "to": 6}}))
    assert cfg.window(9).targets == (4, 5, 6)
    assert cfg.window(9, s=5).targets == tuple(range(4, 10))
