import json

from click.testing import CliRunner

from chiralxfer.cli import main

FAST = ["--set", "sweep.kappa_T=[10]"]


def test_list_shows_registry():
    res = CliRunner().invoke(main, ["list"])
    assert res.exit_code == 0
    assert "noise_leakage" in res.output and "tolerance" in res.output


def test_validate_ok_and_bad():
    runner = CliRunner()
    ok = runner.invoke(main, ["validate", "fig1c"])
    assert ok.exit_code == 0 and "ok" in ok.output
    bad = runner.invoke(main, ["validate", "fig2a", "--set", "physics.beta=1.2"])
    assert bad.exit_code == 1 and "beta" in bad.output
    bad = runner.invoke(main, ["validate", "beamsplitter4", "--set", "engine=mps"])
    assert bad.exit_code == 1


def test_run_csv_to_stdout():
    res = CliRunner().invoke(main, ["run", "noise_leakage", *FAST])
    assert res.exit_code == 0
    lines = res.output.strip().splitlines()
    assert lines[0].startswith("experiment,pulse_family,kappa_T,fidelity")
    assert len(lines) == 3


def test_run_json_to_file(tmp_path):
    out = tmp_path / "rows.json"
    res = CliRunner().invoke(main, ["run", "noise_leakage", *FAST, "--format", "json", "--output", str(out)])
    assert res.exit_code == 0
    rows = json.loads(out.read_text())
    assert {r["params"]["pulse_family"] for r in rows} == {"exp_pair", "const_exp_pair"}


def test_run_with_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "noise_leakage", "sweep": {"kappa_T": [14], "pulse_family": ["exp_pair"]}}))
    res = CliRunner().invoke(main, ["run", "--config", str(cfg)])
    assert res.exit_code == 0
    assert res.output.count("\n") == 2


def test_jobs_from_environment():
    res = CliRunner().invoke(main, ["run", "noise_leakage", *FAST], env={"CHIRALXFER_JOBS": "2"})
    assert res.exit_code == 0
    bad = CliRunner().invoke(main, ["run", "noise_leakage", *FAST, "--jobs", "0"])
    assert bad.exit_code == 2


def test_accept_rejects_unknown_criteria():
    res = CliRunner().invoke(main, ["accept", "--criteria", "0,17"])
    assert res.exit_code == 2
    res = CliRunner().invoke(main, ["accept", "--criteria", "eight"])
    assert res.exit_code == 2


def test_accept_single_criterion():
    res = CliRunner().invoke(main, ["accept", "--criteria", "8"])
    assert "[PASS] criterion  8" in res.output
    assert res.exit_code == 0
