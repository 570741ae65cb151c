import csv
import json

import pytest

from gla import cli

SHIPPED = ["flat2d", "sphere", "so3", "translated", "curved_h", "frame", "quartic"]


def _scenario(**over):
    doc = json.loads((cli.SCENARIO_DIR / "flat2d.json").read_text())
    doc.update(over)
    return doc


def _write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return str(p)


def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_scenarios_load(name):
    sc = cli.load(name)
    assert sc.name == name


def test_sphere_box_is_loaded():
    sc = cli.load("sphere")
    assert sc.gla.domain_box["x[1]"] == (0.2, 2.9)


def test_validate_flat_exit_zero(capsys):
    code, out, _ = _run(["validate", "flat2d", "--no-timestamp"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["passed"] and {s["title"] for s in rep["suites"]} == {"validate", "maurer_cartan"}


def test_identities_sphere_reports_scalar_curvature(capsys):
    code, out, _ = _run(["identities", "sphere", "--points", "100", "--seed", "7"], capsys)
    assert code == 0
    rep = json.loads(out)
    lin = next(s for s in rep["suites"] if s["title"] == "linear")
    assert abs(lin["values"]["scalar_curvature"]["mean"] - 2.0) < 1e-8
    for s in rep["suites"]:
        for e in s["entries"]:
            if s["title"] != "endomorphisms":
                assert e["max_residual"] <= max(e["tolerance"], 1e-8)


def test_integrate_sphere_csv(tmp_path, capsys):
    out_csv = tmp_path / "traj.csv"
    code, out, _ = _run(["integrate", "sphere", "--dt", "1e-3", "--steps", "10000", "--out", str(out_csv)], capsys)
    assert code == 0
    with open(out_csv) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x1", "x2", "y1", "y2", "E"]
    assert len(rows) == 10002 and all(len(r) == 6 for r in rows)
    energy = [float(r[-1]) for r in rows[1:]]
    assert max(energy) - min(energy) <= 1e-6
    assert json.loads(out)["trajectories"][0]["rows"] == 10001


def test_reports_are_deterministic(tmp_path, capsys):
    a = _run(["all", "so3", "--seed", "3", "--points", "30"], capsys)[1]
    b = _run(["all", "so3", "--seed", "3", "--points", "30"], capsys)[1]
    da, db = json.loads(a), json.loads(b)
    da.pop("timestamp")
    db.pop("timestamp")
    assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    c = _run(["all", "so3", "--seed", "3", "--points", "30", "--no-timestamp"], capsys)[1]
    d = _run(["all", "so3", "--seed", "3", "--points", "30", "--no-timestamp"], capsys)[1]
    assert c == d


def test_check_failure_exit_two(tmp_path, capsys):
    doc = _scenario(algebroid={"kind": "lie", "rank": 3, "anchor": [["0", "0"]] * 3,
                               "structure": {"3,1,2": "1", "3,2,1": "1"}})
    for key in ("metric", "lagrangian", "integrator", "connection"):
        doc.pop(key)
    code, out, _ = _run(["validate", _write(tmp_path, doc)], capsys)
    assert code == 2
    rep = json.loads(out)
    assert not rep["passed"]


def test_tight_tolerance_fails(capsys):
    code, out, _ = _run(["integrate", "sphere", "--tol", "1e-30"], capsys)
    assert code == 2


@pytest.mark.parametrize("doc,fragment,pointer", [
    ("{not json", "invalid JSON", ""),
    ({"name": "x"}, "missing required field 'base'", ""),
    ("ASYM", "metric not symmetric", "/metric/g_h/0/1"),
    ("UNDECLARED", "undeclared variable", "/lagrangian"),
    ("BADSHAPE", "expected 2 rows", "/algebroid/anchor"),
    ("BADEXPR", "parse error", "/metric/g_h/1/1"),
    ("BADKIND", "unknown algebroid kind", "/algebroid/kind"),
    ("BADINIT", "expected 4 numbers", "/integrator/initial"),
])
def test_malformed_scenarios_exit_three(tmp_path, capsys, doc, fragment, pointer):
    if doc == "ASYM":
        doc = _scenario(metric={"g_h": [["1", "x[1]"], ["0", "1"]]})
    elif doc == "UNDECLARED":
        doc = _scenario(lagrangian="0.5*z[1]^2")
    elif doc == "BADSHAPE":
        doc = _scenario(algebroid={"kind": "lie", "rank": 2, "anchor": [["1", "0"]]})
    elif doc == "BADEXPR":
        doc = _scenario(metric={"g_h": [["1", "0"], ["0", "1 +"]]})
    elif doc == "BADKIND":
        doc = _scenario(algebroid={"kind": "weird"})
    elif doc == "BADINIT":
        doc = _scenario(integrator={"initial": [0, 0]})
    code, _, err = _run(["validate", _write(tmp_path, doc)], capsys)
    assert code == 3
    payload = json.loads(err)
    assert fragment in payload["message"]
    assert payload["pointer"] == pointer


def test_metric_not_symmetric_load_error(tmp_path):
    path = _write(tmp_path, _scenario(metric={"g_h": [["1", "x[1]"], ["0", "1"]]}))
    with pytest.raises(cli.ScenarioError, match="metric not symmetric"):
        cli.load(path)


def test_missing_file_and_bad_flags(capsys):
    assert _run(["validate", "/nonexistent/scenario.json"], capsys)[0] == 3
    assert _run(["validate", "flat2d", "--points", "0"], capsys)[0] == 3
    assert _run(["frobnicate", "flat2d"], capsys)[0] == 3
    assert _run(["integrate", "frame"], capsys)[0] == 0  # nothing to integrate: skipped, not failed


def test_numerical_error_exit_four(tmp_path, capsys):
    doc = _scenario(lagrangian="0.5*(y[1]^2 + y[2]^2)", force=["2*y[1]^3", "0"],
                    integrator={"dt": 0.1, "steps": 200, "initial": [0, 0, 10, 0]})
    code, _, err = _run(["integrate", _write(tmp_path, doc)], capsys)
    assert code == 4
    payload = json.loads(err)
    assert payload["suite"] == "integrate" and "point" in payload


def test_domain_error_names_suite_and_point(tmp_path, capsys):
    doc = _scenario(metric={"g_h": [["1", "0"], ["0", "log(x[1])"]]})
    code, _, err = _run(["identities", _write(tmp_path, doc)], capsys)
    assert code == 4
    payload = json.loads(err)
    assert payload["error"] == "DomainError" and "x[1]" in payload["point"]


def test_initial_flag_overrides(capsys):
    code, out, _ = _run(["integrate", "flat2d", "--initial", "0,0,0,2", "--steps", "10", "--dt", "0.1"], capsys)
    assert code == 0
    vals = json.loads(out)["suites"][0]["values"]
    assert vals["final"] == pytest.approx([0, 2.0, 0, 2.0])


def test_suite_filter(capsys):
    code, out, _ = _run(["all", "sphere", "--suite", "validate,integrate"], capsys)
    assert code == 0
    assert [s["title"] for s in json.loads(out)["suites"]] == ["validate", "integrate"]


def test_legendre_command_quartic(capsys):
    code, out, _ = _run(["legendre", "quartic"], capsys)
    assert code == 0
    rep = json.loads(out)
    inv = next(s for s in rep["suites"] if s["title"] == "involution")
    assert inv["values"]["newton_coverage"] >= 0.99


def test_report_file(tmp_path, capsys):
    path = tmp_path / "rep.json"
    code, out, _ = _run(["tensors", "sphere", "--report", str(path)], capsys)
    assert code == 0
    rep = json.loads(path.read_text())
    assert rep["tool_version"] and rep["scenario"] == "sphere"
    lc = next(s for s in rep["suites"] if s["title"] == "levi_civita")
    assert "Gamma^1_22" in lc["values"]["christoffel"]
