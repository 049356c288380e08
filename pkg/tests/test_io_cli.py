import csv
import io
import json

import numpy as np
import pytest

from conftest import SMALL_THETA0, small_identified_spec
from lcmdiv import ModelSpec, ParameterVector, index_of, manifest_distribution, power_divergence
from lcmdiv import io as lio
from lcmdiv.cli import main
from lcmdiv.simulation import CSV_COLUMNS


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def small_files(tmp_path):
    spec = small_identified_spec()
    p = manifest_distribution(spec, SMALL_THETA0)
    counts = np.round(p * 2000).astype(int)
    return {
        "spec": spec,
        "counts": counts,
        "model": write(tmp_path / "model.json", lio.serialize_model_spec(spec)),
        "data": write(tmp_path / "data.csv", lio.serialize_counts(counts, spec.k)),
        "dir": tmp_path,
    }


# ---- model documents ----------------------------------------------------------------

@pytest.mark.parametrize("name", ["coleman.json", "section5.json", "section5_contaminant.json"])
def test_bundled_models_parse(name):
    spec = lio.load_bundled_model(name)
    again = lio.parse_model_spec(lio.serialize_model_spec(spec))
    np.testing.assert_array_equal(again.Q, spec.Q)
    np.testing.assert_array_equal(again.V, spec.V)


def test_section5_dimensions():
    spec = lio.load_bundled_model("section5.json")
    assert (spec.m, spec.k, spec.t, spec.u) == (10, 5, 7, 6)


def test_wrong_q_shape_names_the_matrix(coleman_spec):
    doc = lio.model_to_dict(coleman_spec)
    doc["Q"][2] = [[0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0]]
    with pytest.raises(lio.ParseError) as info:
        lio.model_from_dict(doc, "m.json")
    assert "Q[2]" in str(info.value) and "m.json" in str(info.value)


def test_unknown_and_missing_keys(coleman_spec):
    doc = lio.model_to_dict(coleman_spec)
    with pytest.raises(lio.ParseError, match="unknown key"):
        lio.model_from_dict({**doc, "extra": 1})
    del doc["d"]
    with pytest.raises(lio.ParseError, match="'d'"):
        lio.model_from_dict(doc)


def test_json_syntax_error_has_line():
    with pytest.raises(lio.ParseError) as info:
        lio.parse_model_spec('{\n "m": 1,\n oops}', "x.json")
    assert info.value.line == 3


# ---- counts ---------------------------------------------------------------------

def test_coleman_counts_totals():
    printed = lio.load_bundled_counts("coleman_as_printed.csv", 4)
    corrected = lio.load_bundled_counts("coleman.csv", 4)
    assert printed.sum() == 6458
    assert corrected.sum() == 6658
    assert corrected[0] == 1090 and corrected[int("1010", 2)] == 292
    assert np.count_nonzero(printed != corrected) == 2


def test_missing_pattern_counts_zero():
    text = lio.serialize_counts(np.arange(1, 17), 4)
    text = "\n".join(line for line in text.splitlines() if not line.startswith("0110"))
    counts = lio.parse_counts(text, 4)
    assert counts[int("0110", 2)] == 0
    assert counts.sum() == 136 - 7


def test_counts_any_order_and_blank_lines():
    counts = lio.parse_counts("11,4\n\n00,1\n10,3\n", 2)
    np.testing.assert_array_equal(counts, [1, 0, 3, 4])


@pytest.mark.parametrize("text, line, fragment", [
    ("00,1\n01,2\n00,3\n", 3, "duplicate pattern 00 (first on line 1)"),
    ("00,1\n0a,2\n", 2, "0/1"),
    ("00,1\n011,2\n", 2, "2 characters"),
    ("00,-1\n", 1, "negative"),
    ("00,1.5\n", 1, "integer"),
    ("00;1\n", 1, "pattern,count"),
])
def test_count_errors(text, line, fragment):
    with pytest.raises(lio.ParseError) as info:
        lio.parse_counts(text, 2, "d.csv")
    assert info.value.line == line
    assert fragment in str(info.value)
    assert f"d.csv:{line}" in str(info.value)


def test_all_zero_counts_rejected():
    with pytest.raises(lio.ParseError):
        lio.parse_counts("00,0\n", 2)


@pytest.mark.parametrize("k", range(1, 7))
def test_file_order_matches_pattern_index(k):
    counts = np.arange(1, 2 ** k + 1)
    text = lio.serialize_counts(counts, k)
    for line in text.splitlines():
        pattern, value = line.split(",")
        assert counts[index_of([int(c) for c in pattern]) - 1] == int(value)
    np.testing.assert_array_equal(lio.parse_counts(text, k), counts)


# ---- parameters and family literals -----------------------------------------------

def test_theta_roundtrip_and_errors(coleman_spec):
    theta = ParameterVector(np.arange(8) / 7, [0.1, 0.2, 0.3, 0.0])
    text = json.dumps(lio.theta_to_dict(theta))
    assert lio.parse_theta(text, coleman_spec) == theta
    with pytest.raises(lio.ParseError, match="lambda"):
        lio.parse_theta('{"lambda": [1], "eta": [0, 0, 0, 0]}', coleman_spec)
    with pytest.raises(lio.ParseError, match="unknown key"):
        lio.parse_theta('{"lambda": [], "eta": [], "x": 1}', coleman_spec)


@pytest.mark.parametrize("literal, value", [
    ("2/3", 2 / 3), ("0.6667", 0.6667), ("0.66667", 0.66667), ("-1/2", -0.5), ("3", 3.0), (0, 0.0),
])
def test_parse_family(literal, value):
    a, text = lio.parse_family(literal)
    assert a == pytest.approx(value, abs=1e-16)
    assert text == str(literal)


@pytest.mark.parametrize("literal", ["two", "1/0", "inf", ""])
def test_parse_family_rejects(literal):
    with pytest.raises(ValueError):
        lio.parse_family(literal)


# ---- plans -----------------------------------------------------------------------

@pytest.mark.parametrize("name", ["section5_plan.json", "section5_smoke_plan.json",
                                  "section5_contamination_plan.json"])
def test_bundled_plans_parse(name):
    path = lio.bundled_path(name)
    plan, config, n_jobs = lio.parse_plan(path.read_text(), path.parent, name)
    assert plan.spec.k == 5 and config.n_initial == 500 and n_jobs >= 1
    assert (plan.contamination is not None) == ("contamination" in name)


def test_plan_unknown_key(tmp_path):
    with pytest.raises(lio.ParseError, match="unknown key"):
        lio.parse_plan('{"model": "bundled:coleman.json", "bogus": 1}', tmp_path)


# ---- command line ------------------------------------------------------------------

def run_fit(files, out, *extra):
    return main(["fit", "--model", files["model"], "--data", files["data"], "--a", "0",
                 "--starts", "20", "--seed", "4", "--out", str(out), *extra])


def test_cli_fit_writes_result(small_files):
    out = small_files["dir"] / "fit.json"
    assert run_fit(small_files, out) == 0
    doc = lio.load_result(out.read_text())
    assert doc["success"] and doc["converged"]
    assert doc["inputs"]["N"] == int(small_files["counts"].sum())
    assert doc["family"]["literal"] == "0"
    # objective re-evaluated from the stored parameters
    spec = small_files["spec"]
    theta = lio.parse_theta(out.read_text(), spec)
    ph = small_files["counts"] / small_files["counts"].sum()
    value = power_divergence(0.0, ph, manifest_distribution(spec, theta))
    assert abs(value - doc["objective"]) < 1e-10
    assert doc["asymptotics"]["error"] is None
    assert len(doc["asymptotics"]["se"]["lambda"]) == 4


def test_cli_fit_is_reproducible(small_files):
    a, b = small_files["dir"] / "a.json", small_files["dir"] / "b.json"
    assert run_fit(small_files, a) == 0 and run_fit(small_files, b, "--jobs", "2") == 0
    da, db = json.loads(a.read_text()), json.loads(b.read_text())
    assert lio.dump_result(lio.strip_timestamp(da)) == lio.dump_result(lio.strip_timestamp(db))


@pytest.mark.parametrize("literal", ["2/3", "0.6667", "0.66667"])
def test_cli_accepts_rational_and_decimal_literals(small_files, literal):
    out = small_files["dir"] / "f.json"
    code = main(["fit", "--model", small_files["model"], "--data", small_files["data"],
                 "--a", literal, "--starts", "5", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["family"]["literal"] == literal
    assert doc["family"]["a"] == pytest.approx(2 / 3, abs=1e-4)


def test_cli_usage_errors(small_files, capsys):
    assert main(["fit", "--model", small_files["model"], "--a", "0", "--out", "x"]) == 1
    assert main(["fit", "--model", small_files["model"], "--data", small_files["data"],
                 "--a", "two", "--out", "x"]) == 1
    assert main(["fit", "--model", small_files["model"], "--data", small_files["data"],
                 "--a", "0", "--bounds", "1", "-1", "--out", "x"]) == 1
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_data_errors(small_files, capsys):
    bad = write(small_files["dir"] / "bad.json", '{"m": 2}')
    assert main(["fit", "--model", bad, "--data", small_files["data"], "--a", "0", "--out", "x"]) == 2
    assert "bad.json" in capsys.readouterr().err
    badcounts = write(small_files["dir"] / "bad.csv", "000,1\n000,2\n")
    assert main(["fit", "--model", small_files["model"], "--data", badcounts,
                 "--a", "0", "--out", "x"]) == 2
    assert "bad.csv:2" in capsys.readouterr().err
    assert main(["fit", "--model", "nope.json", "--data", small_files["data"],
                 "--a", "0", "--out", "x"]) == 2


def test_cli_optimization_failure(tmp_path):
    spec = ModelSpec.build(np.zeros((1, 1, 1)), np.zeros((1, 0)), C=np.array([[-800.0]]))
    model = write(tmp_path / "m.json", lio.serialize_model_spec(spec))
    data = write(tmp_path / "d.csv", "0,0\n1,5\n")
    out = tmp_path / "r.json"
    assert main(["fit", "--model", model, "--data", data, "--a", "1", "--starts", "3",
                 "--out", str(out)]) == 3
    doc = json.loads(out.read_text())
    assert doc["success"] is False and doc["theta"] is None


def test_cli_se(small_files):
    theta = write(small_files["dir"] / "theta.json",
                  json.dumps(lio.theta_to_dict(ParameterVector.from_flat(4, SMALL_THETA0))))
    out = small_files["dir"] / "se.json"
    assert main(["se", "--model", small_files["model"], "--theta", theta,
                 "--n", "1000", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["asymptotics"]["birch"]["full_rank"]
    assert len(doc["asymptotics"]["covariance"]) == 5


def test_cli_se_rank_deficient(tmp_path, coleman_spec):
    # without an identified model there is no covariance: duplicated lambda columns
    Q = np.zeros((2, 2, 3))
    Q[:, 0, :] = 1.0
    spec = ModelSpec.build(Q, np.array([[1.0], [0.0]]))
    model = write(tmp_path / "m.json", lio.serialize_model_spec(spec))
    theta = write(tmp_path / "t.json", '{"lambda": [0.1, 0.2], "eta": [0.3]}')
    out = tmp_path / "se.json"
    assert main(["se", "--model", model, "--theta", theta, "--n", "10", "--out", str(out)]) == 2
    assert "rank" in json.loads(out.read_text())["asymptotics"]["error"]


def test_cli_validate(capsys):
    model = str(lio.bundled_path("coleman.json"))
    assert main(["validate", "--model", model]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["valid"] and doc["birch"]["rank"] == 11
    assert doc["identified_up_to_eta_shift"]


def test_cli_simulate_tiny_plan(small_files):
    plan = {
        "model": "model.json",
        "theta0": lio.theta_to_dict(ParameterVector.from_flat(4, SMALL_THETA0)),
        "sample_sizes": [200], "a": ["0", "2/3"], "replicates": 2, "seed": 1,
        "optimizer": {"starts": 10, "bounds": [-10, 10]},
    }
    path = write(small_files["dir"] / "plan.json", json.dumps(plan))
    out = small_files["dir"] / "summary.csv"
    assert main(["simulate", "--plan", path, "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert list(rows[0]) == CSV_COLUMNS
    assert [r["a"] for r in rows] == ["0", "2/3"]
    assert all(int(r["n_success"]) == 2 for r in rows)
