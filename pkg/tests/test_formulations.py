import numpy as np
import pytest
from scipy.stats import norm

from uccd import formulations as F
from uccd import library as L
from uccd import model as M
from uccd import risk as R
from uccd import solve as S
from uccd import usets as U


def _solve(doc, ftype, **kw):
    return S.solve(F.compile_problem(M.build_problem(doc), ftype, **kw))


def _soft_target(uncertainty):
    doc = L.tradeoff_problem()
    doc["uncertainty"] = uncertainty
    return doc


def test_det_recovers_min_energy_cost():
    # The discrete optimum is about 12 + 46.6 h^2, so 1e-3 needs at least 217 nodes.
    rep = _solve(L.double_integrator(241), "det")
    assert rep.status == "optimal"
    assert rep.objective == pytest.approx(12.0, abs=1e-3)


def test_se_not_below_det_for_symmetric_spread():
    doc = _soft_target([{"target": ["xi0[0]"], "kind": "discrete",
                         "params": {"values": [-0.1, 0.1], "probabilities": [0.5, 0.5]}}])
    det, se = _solve(doc, "det"), _solve(doc, "se")
    assert se.objective >= det.objective - 1e-8


@pytest.mark.parametrize("p_f", [0.5, 0.1, 0.02275])
def test_gaussian_chance_boundary(p_f):
    rep = _solve(L.chance_problem(), "scc", mode="gaussian", p_f=p_f)
    assert rep.objective == pytest.approx(1.0 + norm.ppf(1 - p_f) * 0.5, abs=1e-4)


def test_vertex_mode_matches_hand_enumeration():
    # Worst case of q1 p1 + q2 p2 over the box is the (1.1, 0.6) corner for p >= 0.
    rep = _solve(L.static_box_problem(0.1), "wcr", mode="vertex")
    a = np.array([1.1, 0.6])
    p = np.ones(2) - (a @ np.ones(2) - 1.0) / (a @ a) * a
    assert rep.objective == pytest.approx(np.sum((p - 1.0) ** 2), abs=1e-6)


def test_fe_symmetric_triangle_matches_det():
    doc = L.double_integrator(21)
    doc["uncertainty"] = [{"target": ["xi0[0]"], "kind": "triangular",
                           "params": {"a": -0.1, "b": 0.0, "c": 0.1}}]
    assert _solve(doc, "fe").objective == pytest.approx(_solve(doc, "det").objective, abs=1e-4)


def test_fe_grows_with_support():
    vals = []
    for w in (0.0, 0.1, 0.2):
        doc = _soft_target([{"target": ["xi0[0]"], "kind": "triangular",
                             "params": {"a": -w, "b": 0.0, "c": w}}])
        rep = _solve(doc, "fe", n_levels=6)
        assert rep.status == "optimal"
        vals.append(rep.objective)
    assert vals[0] <= vals[1] + 1e-6 <= vals[2] + 2e-6


@pytest.mark.parametrize("pos_f, expect", [(0.5, 1.5), (0.25, 1.75)])
def test_possibilistic_boundary_on_flank(pos_f, expect):
    # membership of a triangular (0, 1, 2) is 0.5 at 1.5 and 0.25 at 1.75
    doc = L.chance_problem()
    doc["uncertainty"] = [{"target": ["xi"], "kind": "triangular", "params": {"a": 0.0, "b": 1.0, "c": 2.0}}]
    assert _solve(doc, "pcc", pos_f=pos_f).objective == pytest.approx(expect, abs=1e-6)


def test_incompatible_family_rejected():
    with pytest.raises(F.CompatibilityError):
        F.compile_problem(M.build_problem(L.static_box_problem()), "se")
    with pytest.raises(F.CompatibilityError):
        F.compile_problem(M.build_problem(L.chance_problem()), "wcr")


def test_merge_duplicates_sums_weights():
    sc = U.ScenarioSet(np.array([[1.0], [2.0], [1.0]]), np.array([0.25, 0.25, 0.5]), "mcs", ("a",))
    m = F.merge_duplicates(sc)
    np.testing.assert_array_equal(m.points, [[1.0], [2.0]])
    np.testing.assert_allclose(m.weights, [0.75, 0.25])


def test_merge_level_duplicates_keeps_top_level():
    sc = U.alpha_grid_scenarios([U.Triangular(0.0, 0.0, 0.0)], 5, ("a",))
    m = F.merge_level_duplicates(sc)
    assert m.n == 1 and m.weights[0] == 1.0
    lo, hi, _, _ = R.level_envelopes(sc.points.T, sc.weights, sc.levels)
    lo2, hi2, _, _ = R.level_envelopes(m.points.T, m.weights, m.levels)
    np.testing.assert_array_equal(lo, lo2)
    np.testing.assert_array_equal(hi, hi2)


def test_zero_variance_se_equals_det():
    doc = L.double_integrator(21)
    doc["uncertainty"] = [{"target": ["m"], "kind": "discrete", "params": {"values": [1.0], "probabilities": [1.0]}}]
    nlp = F.compile_problem(M.build_problem(doc), "se", samples=30)
    assert nlp.S == 1
    assert S.solve(nlp).objective == pytest.approx(_solve(doc, "det").objective, abs=1e-10)


def test_olmc_has_one_control_per_scenario():
    doc = L.tradeoff_problem(samples=4)
    p = M.build_problem(doc)
    olsc = F.compile_problem(p, "se", "olsc")
    olmc = F.compile_problem(p, "se", "olmc")
    assert len(set(olsc.ctrl_of)) == 1
    assert len(set(olmc.ctrl_of)) == olmc.S


def test_gradient_matches_finite_differences():
    nlp = F.compile_problem(M.build_problem(L.tradeoff_problem(n_nodes=5, samples=3)), "pr-w", alpha_w=0.5)
    x = nlp.initial_guess() + 0.1 * np.random.default_rng(0).normal(size=nlp.n)
    ev = nlp.evaluate(x)
    y_eq = np.random.default_rng(1).normal(size=ev.c_eq.size)
    y_in = np.abs(np.random.default_rng(2).normal(size=ev.c_in.size))

    def lag(z):
        e = nlp.evaluate(z)
        return e.f + y_eq @ e.c_eq + y_in @ e.c_in

    g = nlp.gradient(ev, 1.0, y_eq, y_in)
    h = 1e-6
    fd = np.array([(lag(x + h * e) - lag(x - h * e)) / (2 * h) for e in np.eye(nlp.n)])
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6)
