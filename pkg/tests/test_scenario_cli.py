import copy
import csv
import json

import numpy as np
import pytest
import yaml
from hypothesis import given, settings, strategies as st

from semirad import cli
from semirad.errors import ConfigError
from semirad.scenario import (
    SCENARIO_DIR,
    Certificate,
    bundled_scenarios,
    compare_certificates,
    load_scenario,
    parse_scenario,
    run_scenario,
)

MINIMAL = {
    "schema_version": 1,
    "id": "tiny",
    "model": "schrodinger",
    "physics": {"mass": 4.0, "charge": 1.0, "hbar": 1.0, "c": 1.0},
    "state": {"components": [{"amplitude": 1.0, "k_center": [0.1, 0.0, 0.0], "sigma_k": 0.25}]},
    "grid": {"half_extent": 15.0, "spacing": 1.0},
    "time": {"t_center": 0.0, "dt": 0.5, "n_samples": 9},
    "observation": {"directions": [[1, 0, 0], [0, 1, 0], [0, 0, 1]], "R0_factor": 100},
    "analysis": {"max_order": 3, "tol": 1e-6, "expect_certified": True},
}


def write(tmp_path, raw, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


# -- parsing ----------------------------------------------------------------------------------

def test_bundled_scenarios_all_parse():
    names = bundled_scenarios()
    assert {"free_interference", "larmor_uniform_force", "mixed_hbar", "kg_mixed", "dirac_mixed"} <= set(names)
    for n in names:
        scn = load_scenario(n)
        assert scn.id == n
        assert len(scn.directions) >= 6


def test_roundtrip_yields_identical_configuration():
    for n in bundled_scenarios():
        scn = load_scenario(n)
        back = parse_scenario(yaml.safe_load(yaml.safe_dump(scn.to_dict())))
        assert back.grid == scn.grid and back.sampling == scn.sampling
        np.testing.assert_array_equal(back.directions, scn.directions)
        assert back.to_dict() == scn.to_dict()


@pytest.mark.parametrize("mutate, path", [
    (lambda r: r.pop("model"), "model"),
    (lambda r: r.update(model="photon"), "model"),
    (lambda r: r.update(schema_version=2), "schema_version"),
    (lambda r: r["time"].update(dt=-1.0), "time.dt"),
    (lambda r: r["analysis"].update(tol=0.0), "analysis.tol"),
    (lambda r: r["grid"].pop("spacing"), "grid.spacing"),
    (lambda r: r["state"]["components"][0].update(k_center=[1, 2]), "state.components[0].k_center"),
    (lambda r: r["observation"].update(R0_factor=10), "observation.R0_factor"),
    (lambda r: r["physics"].update(mass="heavy"), "physics.mass"),
])
def test_schema_errors_name_the_key(mutate, path):
    raw = copy.deepcopy(MINIMAL)
    mutate(raw)
    with pytest.raises(ConfigError) as exc:
        parse_scenario(raw)
    assert exc.value.path == path


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "nope.yaml")


def test_refined_halves_spacing_and_dt():
    scn = parse_scenario(MINIMAL)
    fine = scn.refined()
    np.testing.assert_allclose(fine.grid.spacing, np.asarray(scn.grid.spacing) / 2)
    assert fine.sampling.dt == scn.sampling.dt / 2
    assert fine.sampling.times[0] == scn.sampling.times[0] and fine.sampling.times[-1] == scn.sampling.times[-1]


# -- pipeline ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_result():
    return run_scenario(parse_scenario(MINIMAL))


def test_tiny_free_packet_passes(tiny_result):
    cert = tiny_result.certificate
    assert cert.verdict == "pass"
    assert cert.checks["nonradiation_certified"]["certified"]
    assert cert.measurements["degrees"] == [[0, 1, 2]] * 3


def test_verdict_requires_every_check():
    c = Certificate("x", "schrodinger", {"a": {"passed": True}, "b": {"passed": False}})
    assert c.verdict == "fail"
    c.checks["b"]["passed"] = True
    assert c.verdict == "pass"


def test_expected_certification_mismatch_fails():
    raw = copy.deepcopy(MINIMAL)
    raw["analysis"]["expect_certified"] = False
    cert = run_scenario(parse_scenario(raw), stage="certify").certificate
    assert not cert.checks["nonradiation_certified"]["passed"]
    assert cert.verdict == "fail"


def test_certificate_json_is_canonical(tiny_result):
    text = tiny_result.certificate.to_json()
    d = json.loads(text)
    assert json.dumps(d, indent=2, sort_keys=True) == text
    assert "time" not in text.lower().replace("times", "")


# -- compare ----------------------------------------------------------------------------------

def test_compare_identical_is_empty(tiny_result):
    d = tiny_result.certificate.to_dict()
    assert compare_certificates(d, copy.deepcopy(d), 1e-6) == []


def test_compare_flags_tenfold_deviation(tiny_result):
    a = tiny_result.certificate.to_dict()
    b = copy.deepcopy(a)
    b["residuals"]["continuity"] *= 1 + 10 * 1e-3
    diffs = compare_certificates(a, b, 1e-3)
    assert [k for k, *_ in diffs] == ["residuals.continuity"]
    assert compare_certificates(a, b, 1e-3, skip={"residuals"}) == []


def test_compare_rejects_different_scenarios(tiny_result):
    a = tiny_result.certificate.to_dict()
    b = dict(a, scenario="other")
    with pytest.raises(ConfigError):
        compare_certificates(a, b, 1e-3)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(1e-9, 1e-1))
def test_compare_is_symmetric(x, tol):
    a = {"scenario": "s", "measurements": {"v": x}}
    b = {"scenario": "s", "measurements": {"v": x * (1 + 2 * tol)}}
    assert bool(compare_certificates(a, b, tol)) == bool(compare_certificates(b, a, tol))


# -- CLI ----------------------------------------------------------------------------------------

def test_cli_run_writes_csv_schemas(tmp_path):
    p = write(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert cli.main(["run", "--scenario", str(p), "--out", str(out)]) == cli.EXIT_PASS
    with open(out / "moments.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "m", "Ix", "Iy", "Iz"]
    assert len(rows) == 1 + 9 * 3
    with open(out / "flux.csv") as fh:
        assert next(csv.reader(fh)) == ["R0", "t", "P"]
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["verdict"] == "pass"


def test_cli_reruns_are_bit_identical(tmp_path):
    p = write(tmp_path, MINIMAL)
    for d, th in (("a", "1"), ("b", "3")):
        assert cli.main(["run", "--scenario", str(p), "--out", str(tmp_path / d), "--threads", th]) == 0
    for name in ("certificate.json", "moments.csv", "flux.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert cli.main(["compare", str(tmp_path / "a" / "certificate.json"),
                     str(tmp_path / "b" / "certificate.json"), "--tol", "1e-12"]) == 0


def test_cli_missing_model_exits_2(tmp_path, capsys):
    raw = copy.deepcopy(MINIMAL)
    raw.pop("model")
    assert cli.main(["validate", "--scenario", str(write(tmp_path, raw))]) == cli.EXIT_CONFIG
    assert "model" in capsys.readouterr().err


def test_cli_usage_error_exits_2():
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG


def test_cli_escape_is_numerical_rejection(tmp_path, capsys):
    raw = copy.deepcopy(MINIMAL)
    raw["grid"] = {"half_extent": 3.0, "spacing": 1.0}
    assert cli.main(["moments", "--scenario", str(write(tmp_path, raw))]) == cli.EXIT_NUMERICAL
    assert "numerical rejection" in capsys.readouterr().err


def test_cli_physics_failure_exits_1(tmp_path):
    raw = copy.deepcopy(MINIMAL)
    raw["model"] = "schrodinger_forced"
    raw["state"]["force"] = [0.05, 0.0, 0.0]
    assert cli.main(["certify", "--scenario", str(write(tmp_path, raw))]) == cli.EXIT_FAIL


def test_cli_max_order_override(tmp_path):
    p = write(tmp_path, MINIMAL)
    out = tmp_path / "o"
    assert cli.main(["moments", "--scenario", str(p), "--out", str(out), "--max-order", "2"]) == 0
    with open(out / "moments.csv") as fh:
        ms = {int(r["m"]) for r in csv.DictReader(fh)}
    assert ms == {1, 2}


def test_threads_env_overrides_flag(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli._threads(1) == 3
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        cli._threads(1)


def test_scenario_dir_ships_yaml():
    assert any(SCENARIO_DIR.glob("*.yaml"))
