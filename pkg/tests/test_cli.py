import csv
import io
import json
import math

import jsonschema
import pytest

from soswet import checks, cli, formulas
from soswet.cli import FORMAT_VERSION, emit, main


def run(capsysbinary, argv):
    code = main(argv)
    out = capsysbinary.readouterr()
    return code, out.out, out.err


def test_emit_json_canonical():
    rec = {"b": 1.0, "a": [1, 0.1, None, True], "c": {"z": math.inf, "y": "s"}}
    text = emit(rec).decode()
    assert text == '{"a": [1, 0.10000000000000001, null, true], "b": 1.0, "c": {"y": "s", "z": null}}\n'
    assert emit(rec) == emit(dict(reversed(list(rec.items()))))


def test_emit_json_round_trip():
    rec = {"x": 0.1 + 0.2, "n": 3, "rows": [{"u": 1e-300, "v": -2.5}], "flag": False}
    assert json.loads(emit(rec)) == rec


def test_emit_csv():
    assert emit({"columns": ["a", "b"], "rows": []}, "csv") == b"a,b\n"
    table = {"columns": ["a", "b"], "rows": [{"a": 0.5, "b": "x,y"}, {"a": None, "b": True}]}
    rows = list(csv.reader(io.StringIO(emit(table, "csv").decode())))
    assert rows == [["a", "b"], ["0.5", "x,y"], ["", "true"]]
    with pytest.raises(ValueError):
        emit({}, "xml")


def test_formulas_command(capsysbinary):
    code, out, _ = run(capsysbinary, ["formulas", "--beta", "1", "--u", "0.01"])
    assert code == 0
    rec = json.loads(out)
    assert rec["format_version"] == FORMAT_VERSION
    assert rec["config"]["beta"] == 1.0
    assert rec["results"]["h_w"] == pytest.approx(formulas.wetting_critical_point(1.0))
    assert rec["results"]["layering"]["n_star"] >= 0


def test_byte_stable(capsysbinary):
    argv = ["sample", "--nx", "3", "--ny", "3", "--sweeps", "3000", "--burn-in", "100", "--seed", "4"]
    _, a, _ = run(capsysbinary, argv)
    _, b, _ = run(capsysbinary, argv)
    assert a == b
    rec = json.loads(a)
    est = rec["results"]["estimates"]["p1[1]"]
    assert est["stderr"] is not None and rec["provenance"] == "mcmc"


def test_ci_mode_requires_seed(capsysbinary):
    with pytest.raises(SystemExit):
        main(["sample", "--nx", "3", "--ny", "3", "--sweeps", "300", "--burn-in", "10", "--ci"])


def test_csv_rows_carry_provenance(capsysbinary):
    _, out, _ = run(capsysbinary, ["exact", "--nx", "2", "--ny", "2", "--quantity", "contact_fraction",
                                   "--ensemble", "wetting", "--h", "0.5", "--format", "csv"])
    rows = list(csv.DictReader(io.StringIO(out.decode())))
    assert rows[0]["provenance"] == "exact"
    assert 0 < float(rows[0]["contact_fraction"]) < 1
    _, out, _ = run(capsysbinary, ["freeenergy", "--width", "1", "--hmax", "6", "--u-grid", "0:0.2:3",
                                   "--compare", "--format", "csv"])
    rows = list(csv.DictReader(io.StringIO(out.decode())))
    assert len(rows) == 3 and all(r["provenance"] == "transfer" for r in rows)
    assert float(rows[0]["fbar"]) == 0.0


def test_config_file_and_override(tmp_path, capsysbinary):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# toy\nbeta = 2.0\nu = 0.05  # inline\n", encoding="utf-8")
    _, out, _ = run(capsysbinary, ["formulas", "--config", str(cfg)])
    rec = json.loads(out)
    assert rec["config"]["beta"] == 2.0 and rec["config"]["u"] == 0.05
    _, out, _ = run(capsysbinary, ["formulas", "--config", str(cfg), "--beta", "0.5"])
    assert json.loads(out)["config"]["beta"] == 0.5


def test_config_unknown_key(tmp_path, capsysbinary):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("betta = 2\n", encoding="utf-8")
    with pytest.raises(SystemExit) as info:
        main(["formulas", "--config", str(cfg)])
    assert info.value.code != 0
    assert b"betta" in capsysbinary.readouterr().err


def test_out_file(tmp_path, capsysbinary):
    target = tmp_path / "o.json"
    assert main(["contours", "--enumerate", "8", "--out", str(target)]) == 0
    rec = json.loads(target.read_text())
    assert rec["results"]["counts"] == {"4": 1, "6": 4, "8": 24}


def test_decompose_command(tmp_path, capsysbinary):
    field = {"sites": [[x, y] for y in (1, 2, 3) for x in (1, 2, 3)], "heights": [0, 0, 0, 0, 2, 0, 0, 0, 0],
             "boundary_level": 0}
    path = tmp_path / "f.json"
    path.write_text(json.dumps(field))
    _, out, _ = run(capsysbinary, ["contours", "--decompose", str(path)])
    res = json.loads(out)["results"]
    assert res["energy"] == 8
    assert [(c["sign"], c["intensity"]) for c in res["cylinders"]] == [(1, 2)]


def test_library_errors_exit_cleanly(capsysbinary):
    code, _, err = run(capsysbinary, ["contours", "--enumerate", "7"])
    assert code == 2 and b"even" in err
    code, _, err = run(capsysbinary, ["formulas", "--beta", "-1"])
    assert code == 2


def test_verify_identities(capsysbinary):
    code, out, _ = run(capsysbinary, ["verify", "--suite", "identities"])
    assert code == 0
    report = json.loads(out)
    jsonschema.validate(report, checks.REPORT_SCHEMA)
    assert report["passed"] and not report["failures"]
    names = {c["name"] for c in report["checks"]}
    assert {"lehagga-i", "lehagga-ii", "represent", "geom", "restrict", "dehalf", "chalbound"} <= names


def test_verify_detects_wrong_constant(monkeypatch, capsysbinary):
    real = formulas.small_cluster_constants

    def broken(beta):
        c = real(beta)
        return formulas.SmallClusterConstants(c.H1, c.H2 * 1.01, c.c1, c.c2)

    monkeypatch.setattr(formulas, "small_cluster_constants", broken)
    code, out, err = run(capsysbinary, ["verify", "--suite", "identities"])
    assert code != 0
    assert b"lehagga-ii" in err
    assert "lehagga-ii" in json.loads(out)["failures"]


def test_verify_csv(capsysbinary):
    code, out, _ = run(capsysbinary, ["verify", "--suite", "peierls", "--format", "csv"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.decode())))
    assert [r["name"] for r in rows] == ["contour-counts", "beta1-growth"]
