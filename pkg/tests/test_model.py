import copy

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uccd import formulations as F
from uccd import library as L
from uccd import model as M
from uccd import solve as S


def _min_energy_path(t):
    u = 6.0 - 12.0 * t
    x = np.stack([3.0 * t**2 - 2.0 * t**3, 6.0 * t - 6.0 * t**2], axis=1)
    return u[:, None], x


def test_grid_weights_and_steps():
    g = M.TimeGrid.uniform_grid(0.0, 2.0, 5)
    np.testing.assert_allclose(g.h, 0.5)
    np.testing.assert_allclose(g.weights.sum(), 2.0)
    with pytest.raises(ValueError):
        M.TimeGrid.from_nodes([0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        M.TimeGrid.uniform_grid(1.0, 0.0, 3)


def test_defects_vanish_on_exact_constant_control_path():
    # Trapezoid integrates the linear velocity exactly; position follows t^2/2.
    p = M.build_problem(L.double_integrator(3))
    t = np.array([0.0, 0.5, 1.0])
    d = M.eval_defects(p, np.ones((3, 1)), np.stack([t**2 / 2, t], axis=1))
    assert np.abs(d).max() < 1e-14


def test_objective_on_analytic_control():
    # Trapezoid error on u^2 = (6-12t)^2 is h^2/12 * (f'(1) - f'(0)) = 24 h^2.
    for n, expect in ((101, 12.0024), (201, 12.0006)):
        p = M.build_problem(L.double_integrator(n))
        u, x = _min_energy_path(p.grid.times)
        assert M.eval_objective(p, u, x) == pytest.approx(expect, abs=1e-9)
    assert abs(M.eval_objective(p, u, x) - 12.0) <= 1e-3


def test_serialize_round_trip():
    p = M.build_problem(L.tradeoff_problem())
    again = M.build_problem(M.serialize(p))
    assert M.serialize(again) == M.serialize(p)
    assert again.binding_names == ("m", "xi0[0]")


def test_epigraph_preserves_optimum():
    p = M.build_problem(L.double_integrator(21))
    a = S.solve_nlp(F.compile_problem(p, "det"))
    b = S.solve_nlp(F.compile_problem(M.epigraph_transform(p), "det"))
    assert b.status == "optimal"
    assert abs(a.objective - b.objective) <= 1e-6


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.update(extra=1), "extra"),
    (lambda d: d.pop("grid"), "grid"),
    (lambda d: d["grid"].update(tf=-1.0), "grid"),
    (lambda d: d.update(uncertainty=[{"target": ["nope"], "kind": "gaussian",
                                      "params": {"mu": 0.0, "sigma": 1.0}}]), "uncertainty[0].target"),
    (lambda d: d.update(uncertainty=[{"target": ["m"], "kind": "gaussian",
                                      "params": {"mu": 0.0, "sigma": -1.0}}]), "uncertainty[0]"),
    (lambda d: d["dynamics"].update(id="no_such_system"), "dynamics"),
])
def test_validation_findings_are_located(mutate, path):
    doc = copy.deepcopy(L.double_integrator())
    mutate(doc)
    with pytest.raises(M.ProblemValidationError) as err:
        M.build_problem(doc)
    assert any(p.startswith(path) for p, _ in err.value.findings)


def test_simulate_reproduces_collocation_states():
    p = M.build_problem(L.double_integrator(21))
    u, _ = _min_energy_path(p.grid.times)
    scen = M.scenario_data(p)
    X = M.simulate(p, u[None], np.zeros((1, 0)), scen, np.array([[0.0, 0.0]]))
    d = M.eval_defects(p, u, X[0])
    assert np.abs(d).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 2.0), st.floats(-1.0, 1.0))
def test_defects_linear_in_control_shift(mass, c):
    # Defects are affine in u, so d(u + c) - d(u) does not depend on u.
    p = M.build_problem(L.double_integrator(5, mass=mass))
    rng = np.random.default_rng(0)
    u, x = rng.normal(size=(5, 1)), rng.normal(size=(5, 2))
    u2 = rng.normal(size=(5, 1))
    d1 = M.eval_defects(p, u + c, x) - M.eval_defects(p, u, x)
    d2 = M.eval_defects(p, u2 + c, x) - M.eval_defects(p, u2, x)
    np.testing.assert_allclose(d1, d2, atol=1e-12)
