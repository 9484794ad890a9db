import json
import math

import pytest

from chiralxfer import harness
from chiralxfer.errors import ConfigurationError
from chiralxfer.harness import ResultRow

FAST = ["sweep.kappa_T=[10, 20]"]


def _leak(overrides=()):
    return harness.load_config(None, [*FAST, *overrides], "noise_leakage")


def test_registry_lists_every_experiment():
    ids = [row[0] for row in harness.describe()]
    assert ids == list(harness.REGISTRY)
    assert len(ids) == 14


def test_default_configs_validate():
    for exp_id in ("fig1c", "fig2a", "fig2d", "fig3b", "noise_leakage", "beamsplitter4"):
        cfg = harness.load_config(None, (), exp_id)
        assert harness.validate(cfg) == []


@pytest.mark.parametrize("override, fragment", [
    ("physics.beta=1.2", "beta"),
    ("engine=mps", "engine"),
    ("numerics.dt=0.05", "0.02"),
    ("sweep.P=[0.1, 1.5]", "P = 1.5"),
])
def test_validation_rejects(override, fragment):
    exp = "beamsplitter4" if override.startswith("engine") else "fig2e" if "P=" in override else "fig2a"
    cfg = harness.load_config(None, [override], exp)
    problems = harness.validate(cfg)
    assert problems and any(fragment in p for p in problems)


def test_mps_beamsplitter_is_rejected():
    cfg = harness.load_config(None, ["engine=mps", "sweep.theta=[0.5]"], "fig2d")
    assert any("beamsplitter" in p for p in harness.validate(cfg))


def test_unknown_experiment():
    with pytest.raises(ConfigurationError):
        harness.load_config(None, (), "fig9z")


def test_overrides_parse_json_values():
    doc = harness.apply_overrides({}, ["physics.n_th=0.5", "physics.pulse_family=exp_pair", "sweep.P=[0.1,0.2]"])
    assert doc == {"physics": {"n_th": 0.5, "pulse_family": "exp_pair"}, "sweep": {"P": [0.1, 0.2]}}
    with pytest.raises(ConfigurationError):
        harness.apply_overrides({}, ["nonsense"])


def test_physics_value_pins_sweep_axis():
    cfg = harness.load_config(None, ["physics.n_th=0.25"], "fig2a")
    assert cfg.sweep["n_th"] == [0.25]
    assert "n_th" not in cfg.physics


def test_config_file_merges_with_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"experiment": "noise_leakage", "sweep": {"kappa_T": [12]}}))
    cfg = harness.load_config(str(path))
    assert cfg.sweep["kappa_T"] == [12]
    assert cfg.sweep["pulse_family"] == ["exp_pair", "const_exp_pair"]


def test_run_rows_follow_sweep_order():
    rows = harness.run(_leak())
    assert [(r.params["pulse_family"], r.params["kappa_T"]) for r in rows] == [
        ("exp_pair", 10), ("exp_pair", 20), ("const_exp_pair", 10), ("const_exp_pair", 20)]
    for r in rows:
        assert r.diagnostics["relative_error"] < 1e-6


def test_empty_rows_give_header_only_csv():
    assert harness.to_csv([]) == "experiment,fidelity\n"


def test_json_round_trip():
    rows = harness.run(_leak())
    back = harness.read_json(harness.to_json(rows))
    assert [r.to_dict() for r in back] == [r.to_dict() for r in rows]


def test_failed_point_keeps_its_row():
    row = ResultRow("x", {"a": 1}, math.nan, {"error": "boom"})
    assert "boom" in harness.to_csv([row])
    with pytest.raises(ConfigurationError):
        ResultRow("x", {}, 1.5)


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    harness.emit(harness.run(_leak()), "csv", a)
    harness.emit(harness.run(_leak()), "csv", b)
    assert a.read_bytes() == b.read_bytes()


def test_parallel_run_matches_serial():
    cfg = _leak()
    assert harness.to_csv(harness.run(cfg, jobs=2)) == harness.to_csv(harness.run(cfg, jobs=1))


def test_jobs_fall_back_to_environment(monkeypatch):
    monkeypatch.setenv("CHIRALXFER_JOBS", "3")
    assert harness.resolve_jobs(None) == 3
    assert harness.resolve_jobs(2) == 2
    monkeypatch.delenv("CHIRALXFER_JOBS")
    assert harness.resolve_jobs(None) == 1
    with pytest.raises(ConfigurationError):
        harness.resolve_jobs(0)


def test_code_names():
    assert harness.parse_code("cat@1.5").alpha == 1.5
    assert harness.parse_code("binomial_parity").kind.value == "binomial_parity"
    with pytest.raises(ConfigurationError):
        harness.parse_code("steane")
