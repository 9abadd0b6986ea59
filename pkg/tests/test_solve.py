import numpy as np
import pytest

from uccd import formulations as F
from uccd import library as L
from uccd import model as M
from uccd import solve as S


def _static_doc(statics, cost, constraints=None, constants=None, uncertainty=None):
    doc = {"schema": 1, "grid": {"t0": 0.0, "tf": 1.0, "n_nodes": 2}, "dynamics": {"kind": "none"},
           "statics": statics, "cost": {"mayer": cost}}
    if constraints:
        doc["constraints"] = constraints
    if constants:
        doc["data"] = {"constants": constants}
    if uncertainty:
        doc["uncertainty"] = uncertainty
    return doc


def test_rosenbrock_through_lifted_equality():
    # (1 - p1)^2 + 100 (p2 - w)^2 with w = p1^2 is the 2-D Rosenbrock function.
    doc = _static_doc(
        [{"name": "p1", "initial": -1.2}, {"name": "p2", "initial": 1.0}, {"name": "w", "initial": 1.44}],
        {"linear": {"p1": -2.0}, "constant": 1.0,
         "quadratic": [["p1", "p1", 1.0], ["p2", "p2", 100.0], ["w", "w", 100.0], ["p2", "w", -200.0]]},
        {"equalities": [{"name": "lift", "where": "once", "linear": {"w": 1.0}, "quadratic": [["p1", "p1", -1.0]]}]})
    rep = S.solve_nlp(F.compile_problem(M.build_problem(doc), "det"))
    assert rep.status == "optimal"
    assert rep.slices["statics"]["p1"] == pytest.approx(1.0, abs=1e-4)
    assert rep.slices["statics"]["p2"] == pytest.approx(1.0, abs=1e-4)


def test_report_shapes_and_trace():
    nlp = F.compile_problem(M.build_problem(L.double_integrator(11)), "det")
    rep = S.solve_nlp(nlp)
    assert rep.optimal
    assert rep.slices["controls"].shape == (1, 11, 1)
    assert rep.slices["states"].shape == (1, 11, 2)
    assert rep.trace[-1]["violation"] <= 1e-6
    assert rep.residuals["terminal_residual"][0] <= 1e-6


def test_infeasible_problem_is_reported():
    doc = _static_doc([{"name": "p", "lower": 0.0, "upper": 1.0}], {"linear": {"p": 1.0}},
                      {"inequalities": [{"name": "g", "where": "once", "linear": {"p": -1.0}, "constant": 2.0}]})
    rep = S.solve_nlp(F.compile_problem(M.build_problem(doc), "det"))
    assert rep.status != "optimal"


def test_inner_ascent_finds_interior_maximum():
    # g = -(q - 0.3)^2 = 0.6 q - q^2 - 0.09 peaks at q = 0.3 with value 0.
    doc = _static_doc([{"name": "p", "lower": -5.0, "upper": 5.0}], {"quadratic": [["p", "p", 1.0]]},
                      {"inequalities": [{"name": "g", "where": "once", "linear": {"q": 0.6},
                                         "quadratic": [["q", "q", -1.0]], "constant": -0.09}]},
                      {"q": 0.5},
                      [{"target": ["q"], "kind": "box", "params": {"center": [0.5], "halfwidth": [0.5]}}])
    nlp = F.compile_problem(M.build_problem(doc), "det")
    rep = S.solve_nlp(nlp)
    worst = S.worst_case_entries(nlp, rep.x)["g"]
    assert worst.q[0] == pytest.approx(0.3, abs=1e-6)
    assert worst.value == pytest.approx(0.0, abs=1e-10)


def test_scenario_generation_toy():
    # min p s.t. p >= q for q in [0, 1]; the pool {0} gains q = 1 and p* = 1.
    doc = _static_doc([{"name": "p", "lower": -5.0, "upper": 5.0, "initial": 0.0}], {"linear": {"p": 1.0}},
                      {"inequalities": [{"name": "g", "where": "once", "linear": {"q": 1.0, "p": -1.0}}]},
                      {"q": 0.0},
                      [{"target": ["q"], "kind": "box", "params": {"center": [0.5], "halfwidth": [0.5]}}])
    out = F.compile_problem(M.build_problem(doc), "wcr", mode="scenario-generation", initial_pool=[[0.0]])
    rep = S.solve(out)
    assert rep.status == "optimal"
    assert rep.meta["rounds"] == 1
    assert rep.objective == pytest.approx(1.0, abs=1e-6)


def test_grid_oracle_agrees_on_two_node_problem():
    nlp = F.compile_problem(M.build_problem(L.two_node_double_integrator()), "det")
    idx, names = S.free_variables(nlp)
    assert idx.size == 2
    orc = S.grid_oracle(nlp, resolution=41)
    rep = S.solve_nlp(nlp)
    assert orc.feasible
    assert np.all(np.abs(rep.x[idx] - orc.point) <= orc.cell + 1e-12)
    assert abs(orc.value - rep.objective) <= 1e-3
    assert rep.objective == pytest.approx(8.0 / 9.0, abs=1e-6)


def test_monte_carlo_failure_matches_margin():
    nlp = F.compile_problem(M.build_problem(L.chance_problem()), "scc", mode="gaussian", p_f=0.1)
    rep = S.solve(nlp)
    fail = S.monte_carlo_failure(nlp, rep.x, samples=40_000, seed=5)
    assert fail["g"] == pytest.approx(0.1, abs=3 * np.sqrt(0.09 / 40_000))
    assert fail["any"] == fail["g"]


def test_warm_start_reaches_same_optimum():
    nlp = F.compile_problem(M.build_problem(L.double_integrator(21)), "det")
    cold = S.solve_nlp(nlp)
    warm = S.solve_nlp(nlp, cold.x)
    # multipliers restart from zero, so agreement is at the constraint tolerance
    assert warm.objective == pytest.approx(cold.objective, abs=1e-6)
    assert len(warm.trace) <= len(cold.trace)
