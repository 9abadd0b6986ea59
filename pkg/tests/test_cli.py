import csv
import json

import numpy as np
import pytest

from uccd import cli
from uccd import library as L


def _write(tmp_path, name, doc):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(doc, indent=1))
    return p


def test_validate_ok(tmp_path, capsys):
    assert cli.main(["validate", str(_write(tmp_path, "di", L.double_integrator()))]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_reports_parse_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"schema": 1,\n  "grid": }\n')
    assert cli.main(["validate", str(p)]) == cli.EXIT_VALIDATION
    assert f"{p}:2:" in capsys.readouterr().err


def test_validate_reports_finding_line(tmp_path, capsys):
    doc = L.double_integrator()
    doc["grid"]["n_nodes"] = 1
    p = _write(tmp_path, "bad", doc)
    assert cli.main(["validate", str(p)]) == cli.EXIT_VALIDATION
    err = capsys.readouterr().err
    line = next(i for i, t in enumerate(p.read_text().splitlines(), 1) if '"grid"' in t)
    assert f"{p}:{line}: grid" in err


def test_incompatible_formulation_exit_code(tmp_path):
    p = _write(tmp_path, "box", L.static_box_problem())
    assert cli.main(["solve", str(p), "--formulation", "se", "--out", str(tmp_path / "o")]) == cli.EXIT_COMPAT


def test_solve_writes_artifacts(tmp_path):
    p = _write(tmp_path, "di", L.double_integrator(241))
    out = tmp_path / "o"
    assert cli.main(["solve", str(p), "--formulation", "det", "--out", str(out)]) == 0
    sol = json.loads((out / "solution.json").read_text())
    assert sol["status"] == "optimal"
    assert sol["objective"] == pytest.approx(12.0, abs=1e-3)
    man = json.loads((out / "manifest.json").read_text())
    assert man["formulation"] == "det" and len(man["problem_sha256"]) == 64
    rows = list(csv.reader((out / "trajectories.csv").open()))
    assert rows[0] == ["scenario", "time", "x", "v", "u"]
    assert len(rows) == 242
    assert "wall_time" in json.loads((out / "report.json").read_text())


def test_solution_is_byte_identical_across_threads(tmp_path, monkeypatch):
    p = _write(tmp_path, "tr", L.tradeoff_problem())
    blobs = []
    for n in ("1", "2", "8"):
        monkeypatch.setenv("UCCD_THREADS", n)
        out = tmp_path / f"t{n}"
        assert cli.main(["solve", str(p), "--out", str(out)]) == 0
        blobs.append((out / "solution.json").read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_bad_thread_setting(tmp_path, monkeypatch):
    monkeypatch.setenv("UCCD_THREADS", "many")
    p = _write(tmp_path, "di", L.double_integrator())
    assert cli.main(["solve", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_VALIDATION


def test_chance_solve_reports_fresh_failure(tmp_path):
    p = _write(tmp_path, "ch", L.chance_problem())
    out = tmp_path / "o"
    assert cli.main(["solve", str(p), "--mode", "gaussian", "--p-f", "0.1", "--out", str(out)]) == 0
    rel = json.loads((out / "report.json").read_text())["reliability"]
    assert rel["seed"] == 1
    assert rel["failure_probability"]["g"] == pytest.approx(0.1, abs=0.01)


def test_pareto_small_grid(tmp_path):
    p = _write(tmp_path, "tr", L.tradeoff_problem(samples=8))
    out = tmp_path / "o"
    assert cli.main(["pareto", str(p), "--alpha-grid", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "pareto.csv").open()))
    assert [float(r["alpha_w"]) for r in rows] == [0.0, 0.5, 1.0]
    mu = [float(r["o_mu"]) for r in rows]
    sd = [float(r["o_sigma"]) for r in rows]
    assert all(b <= a + 1e-5 for a, b in zip(mu, mu[1:]))
    assert all(b >= a - 1e-5 for a, b in zip(sd, sd[1:]))


def test_compare_wcr_is_most_reliable(tmp_path):
    p = _write(tmp_path, "pa", L.paired_problem(samples=100))
    out = tmp_path / "o"
    code = cli.main(["compare", str(p), "--formulations", "scc,wcr", "--mc-samples", "100000", "--out", str(out)])
    assert code == 0
    tab = json.loads((out / "comparison.json").read_text())["formulations"]
    assert tab["wcr"]["empirical_failure"]["any"] <= 0.05
    assert tab["wcr"]["worst_case_g"]["overshoot"] <= 1e-5
    assert tab["wcr"]["objective"] >= tab["scc"]["objective"]


def test_oracle_command(tmp_path):
    p = _write(tmp_path, "two", L.two_node_double_integrator())
    out = tmp_path / "o"
    assert cli.main(["oracle", str(p), "--resolution", "41", "--out", str(out)]) == 0
    res = json.loads((out / "oracle.json").read_text())
    assert res["dimension"] == 2
    assert res["argmin_distance_cells"] <= 1.0
    assert res["objective_gap"] <= 1e-3


def test_lqr_demo_prints_gain(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["lqr-demo", "--paths", "50", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    gain = float(text.split("gain=[")[1].split("]")[0])
    assert gain == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-6)
    header = (out / "lqr_ensemble.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["time", "mean_0", "std_0"]


def test_atomic_write_leaves_no_temp_files(tmp_path):
    cli.write_atomic(tmp_path / "a.json", "{}\n")
    cli.write_atomic(tmp_path / "a.json", "[]\n")
    assert [f.name for f in tmp_path.iterdir()] == ["a.json"]
    assert (tmp_path / "a.json").read_text() == "[]\n"
