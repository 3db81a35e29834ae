import json
import os
import pathlib
import subprocess

import jsonschema
import pytest

import ultra

SOURCE = pathlib.Path(os.environ.get("ULTRA_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
CLI = os.environ.get("ULTRA_CLI")
SCHEMA = json.loads((SOURCE / "schemas" / "report.schema.json").read_text())


def test_kalman_rank_of_presets():
    b1, b2 = ultra.drift_preset("jerk")
    assert b1.shape == (3, 1) and b2.shape == (3, 3)
    assert ultra.kalman_rank(b1, b2)["rank"] == 3
    for n in range(2, 9):
        assert ultra.kalman_rank(*ultra.drift_preset("example1", n))["rank"] == n


def test_c2_is_positive_only_under_the_rank_condition():
    b1, b2 = ultra.drift_preset("L1")
    assert ultra.c2_estimate(b1, b2, 0.1) > 0.0
    assert ultra.c2_estimate(b1, 0.0 * b2, 0.1) is None


def test_config_error_carries_location():
    with pytest.raises(ultra.ConfigError, match=r"config:3:3"):
        ultra.normalize_config("operator:\n  preset: jerk\n  colour: red\n")
    assert isinstance(ultra.ConfigError("x"), ultra.Error)


def test_normalized_config_is_a_fixed_point():
    text = ultra.normalize_config((SOURCE / "configs" / "example.yaml").read_text())
    assert ultra.normalize_config(text) == text


def test_run_returns_schema_valid_reports(tmp_path):
    code, reports = ultra.run("operator: {preset: jerk}\nsuite: {items: [check-rank, constants]}\n", out=tmp_path)
    assert code == ultra.EXIT_PASS
    jsonschema.validate(reports, SCHEMA)
    assert [r["suite"] for r in reports] == ["check-rank", "constants"]
    assert reports[0]["values"]["rank"] == 3
    assert json.loads((tmp_path / "reports.json").read_text()) == reports


@pytest.mark.skipif(CLI is None, reason="ULTRA_CLI not set")
def test_cli_example_passes_and_emits_schema_valid_json(tmp_path):
    res = subprocess.run([CLI, "run", "--config", str(SOURCE / "configs" / "example.yaml"), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    jsonschema.validate(json.loads((tmp_path / "reports.json").read_text()), SCHEMA)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["exit_code"] == 0
    assert (tmp_path / "reports.csv").read_text().count("\n") == summary["reports"] + 1


@pytest.mark.skipif(CLI is None, reason="ULTRA_CLI not set")
def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("grid: {nt: 8}\n")
    res = subprocess.run([CLI, "run", "--config", str(bad), "--out", str(tmp_path / "a")], capture_output=True, text=True)
    assert res.returncode == 2
    assert "config:1:" in res.stderr

    regime = tmp_path / "regime.yaml"
    regime.write_text("carleman: {alpha: [1, 2], alpha0: 4}\nsuite: {items: [local], seeds: 1}\n")
    res = subprocess.run([CLI, "run", "--config", str(regime), "--out", str(tmp_path / "b")], capture_output=True)
    assert res.returncode == 3

    failing = tmp_path / "fail.yaml"
    failing.write_text("carleman:\n  alpha: [8]\n  ceilings: {lemma1_floor: 1.0e6}\nsuite: {items: [lemma1], seeds: 1}\n")
    res = subprocess.run([CLI, "run", "--config", str(failing), "--out", str(tmp_path / "c")], capture_output=True)
    assert res.returncode == 1
