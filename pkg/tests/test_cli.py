import json
import subprocess
import sys

import pytest

from fcopf_engine.cli import EXIT_INPUT, EXIT_OK, EXIT_SOLVER, main

from conftest import toy_document


def _run(tmp_path, *argv):
    out = tmp_path / f"{argv[0]}.json"
    code = main([*argv, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_pf_no_dg_reference_row(tmp_path, capsys):
    code, d = _run(tmp_path, "pf", "--fixture", "cigre-lv", "--no-dg")
    assert code == EXIT_OK
    row = d["voltages"][0]
    assert row["bus"] == "11"
    assert round(row["magnitude_pu"][0], 3) == 1.0
    assert round(row["angle_deg"][0], 2) == 0.0
    assert "1.0000∠   0.00°" in capsys.readouterr().out
    assert d["meta"]["label"] == "No-DG"


def test_fcopf_cost_only_equals_opf(tmp_path, capsys):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert main(["fcopf", "--fixture", "cigre-lv", "--w-cost", "1", "--w-fault", "0", "--out", str(a)]) == 0
    assert main(["opf", "--fixture", "cigre-lv", "--out", str(b)]) == 0
    fa, fb = json.loads(a.read_text())["objective"], json.loads(b.read_text())["objective"]
    for key in ("scaled", "cost_scaled"):
        assert fa[key] == pytest.approx(fb[key], abs=1e-6)


def test_missing_file(tmp_path, capsys):
    code = main(["sc", str(tmp_path / "missing.json"), "--out", str(tmp_path / "r.json")])
    assert code == EXIT_INPUT
    assert "missing.json" in capsys.readouterr().err


def test_invalid_document(tmp_path, capsys):
    doc = toy_document()
    doc["lines"][0]["to"] = "nowhere"
    path = tmp_path / "net.json"
    path.write_text(json.dumps(doc))
    code = main(["pf", str(path), "--out", str(tmp_path / "r.json")])
    assert code == EXIT_INPUT
    assert "lines[0].to" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["fcopf", "--fixture", "cigre-lv", "--w-fault", "-1"],
    ["fcopf", "--fixture", "cigre-lv", "--hard-cap", "0"],
    ["pf", "--fixture", "cigre-lv", "--seed", "3"],
    ["pf"],
])
def test_input_errors(tmp_path, argv, capsys):
    assert main([*argv, "--out", str(tmp_path / "r.json")]) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["pf", "--fixture", "nowhere"], ["frobnicate"], ["pf", "--tol", "x"]])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == EXIT_INPUT
    capsys.readouterr()


def test_solver_failure_exit_codes(tmp_path, capsys):
    code, d = _run(tmp_path, "opf", "--fixture", "cigre-lv", "--max-iter", "1")
    assert code == EXIT_SOLVER
    assert d["diagnostics"]["status"] == "IterationLimit"
    code, _ = _run(tmp_path, "pf", "--fixture", "cigre-lv", "--max-iter", "1", "--tol", "1e-14")
    assert code == EXIT_SOLVER
    code, d = _run(tmp_path, "fcopf", "--fixture", "cigre-lv", "--hard-cap", "4000")
    assert code == EXIT_SOLVER
    assert d["diagnostics"]["status"] == "Infeasible"
    assert "solver failure" in capsys.readouterr().err


def test_csv_output(tmp_path, capsys):
    out = tmp_path / "tables"
    assert main(["sc", "--fixture", "cigre-lv", "--csv", str(out), "--out", str(tmp_path / "r.json")]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["dispatch.csv", "faults.csv", "voltages.csv"]


def test_random_fixture_is_deterministic(tmp_path, capsys):
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    for path, seed in ((a, "5"), (b, "5"), (c, "6")):
        assert main(["pf", "--fixture", "random", "--seed", seed, "--no-dg", "--out", str(path)]) == 0
    assert a.read_text() == b.read_text()
    assert a.read_text() != c.read_text()


def test_compare(tmp_path, capsys):
    paths = []
    for argv in (["sc", "--no-dg"], ["sc"], ["fcopf"]):
        p = tmp_path / f"{len(paths)}.json"
        assert main([*argv, "--fixture", "cigre-lv", "--out", str(p)]) == 0
        paths.append(str(p))
    capsys.readouterr()
    cmp_path = tmp_path / "cmp.json"
    assert main(["compare", *paths, "--out", str(cmp_path)]) == 0
    cmp = json.loads(cmp_path.read_text())
    assert cmp["columns"] == ["No-DG", "max-DG", "FC-OPF"]
    assert cmp["bound_violations"] == 0
    assert all(f["annotations"][2] == "within bounds" for f in cmp["faults"])
    assert "within bounds" in capsys.readouterr().out


def test_compare_errors(tmp_path, capsys):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    main(["pf", "--fixture", "cigre-lv", "--no-dg", "--out", str(a)])
    main(["pf", "--fixture", "random", "--seed", "1", "--no-dg", "--out", str(b)])
    capsys.readouterr()
    assert main(["compare", str(a)]) == EXIT_INPUT
    assert "at least two" in capsys.readouterr().err
    assert main(["compare", str(a), str(b)]) == EXIT_INPUT
    assert "mismatched buses" in capsys.readouterr().err
    assert main(["compare", str(a), str(tmp_path / "nope.json")]) == EXIT_INPUT
    (tmp_path / "junk.json").write_text("{}")
    assert main(["compare", str(a), str(tmp_path / "junk.json")]) == EXIT_INPUT


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fcopf_engine.cli", "pf", "--fixture", "cigre-lv", "--no-dg",
                           "--out", str(tmp_path / "r.json")], capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "r.json").exists()
