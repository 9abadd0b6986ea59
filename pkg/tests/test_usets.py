import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uccd import usets as U


def test_gaussian_sample_moments():
    # CLT bound 3/sqrt(n) is about 0.0095 at n = 1e5.
    sc = U.sample_stochastic([U.Gaussian(0.0, 1.0)], 100_000, seed=0)
    assert abs(sc.points.mean()) < 0.02
    assert abs(sc.points.std() - 1.0) < 0.02
    assert sc.provenance == "mcs"
    np.testing.assert_allclose(sc.weights.sum(), 1.0)


def test_sampling_is_seed_deterministic():
    models = [U.Gaussian(1.0, 0.2), U.Uniform(-1.0, 2.0)]
    a = U.sample_stochastic(models, 50, seed=7)
    b = U.sample_stochastic(models, 50, seed=7)
    c = U.sample_stochastic(models, 50, seed=8)
    np.testing.assert_array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_moment_matching_is_exact():
    sc = U.sample_stochastic([U.Gaussian(2.0, 0.5)], 37, seed=3, moment_match=True)
    assert sc.points.mean() == pytest.approx(2.0, abs=1e-12)
    assert sc.points.std() == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("bad", [
    lambda: U.Gaussian(0.0, 0.0),
    lambda: U.Uniform(1.0, 1.0),
    lambda: U.Discrete([1.0, 2.0], [0.5, 0.6]),
    lambda: U.Triangular(2.0, 1.0, 3.0),
])
def test_invalid_models_rejected(bad):
    with pytest.raises(ValueError):
        bad()


def test_ell2_ball_membership():
    ball = U.Ellipsoid((0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), 1.0)
    q = np.array([0.8, 0.8])
    assert np.linalg.norm(q) == pytest.approx(1.131, abs=1e-3)
    assert not U.crisp_contains(ball, q)
    assert U.crisp_contains(ball, [0.6, 0.6])


def test_box_vertices_enumerated():
    sc = U.enumerate_vertices(U.Box((1.0, 0.5), (0.1, 0.2)))
    assert sc.provenance == "vertices"
    got = {tuple(np.round(p, 12)) for p in sc.points}
    assert got == {(0.9, 0.3), (0.9, 0.7), (1.1, 0.3), (1.1, 0.7)}


def test_trapezoid_alpha_cut():
    assert U.alpha_cut(U.Trapezoidal(0.0, 1.0, 2.0, 4.0), 0.25) == pytest.approx((0.25, 3.5))


def test_triangular_membership_flanks():
    tri = U.Triangular(-2.0, -1.0, 1.0)
    assert U.membership(tri, 0.0) == pytest.approx(0.5)
    assert U.membership(tri, -1.0) == pytest.approx(1.0)
    assert U.membership(tri, 5.0) == 0.0


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-5, 5), w1=st.floats(0.01, 3), w2=st.floats(0.01, 3),
       lo=st.floats(0.0, 1.0), hi=st.floats(0.0, 1.0))
def test_alpha_cuts_are_nested(a, w1, w2, lo, hi):
    lo, hi = sorted((lo, hi))
    tri = U.Triangular(a, a + w1, a + w1 + w2)
    outer, inner = U.alpha_cut(tri, max(lo, 1e-9)), U.alpha_cut(tri, max(hi, 1e-9))
    assert outer[0] <= inner[0] + 1e-12 and inner[1] <= outer[1] + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.floats(0.05, 2.0))
def test_box_projection_lands_inside(y, h):
    # project acts on normalized parameters; to_point maps them into the set
    box = U.Box((0.0, 0.0), (h, h))
    y = np.asarray(y)
    p = box.project(y)
    assert U.crisp_contains(box, box.to_point(p))
    if np.all(np.abs(y) <= 1.0):
        np.testing.assert_allclose(p, y)


def test_model_from_block_rejects_unknown():
    with pytest.raises(ValueError):
        U.model_from_block("lognormal", {})
    with pytest.raises(ValueError):
        U.model_from_block("gaussian", {"mu": 0.0})
    assert isinstance(U.model_from_block("box", {"center": [0.0], "halfwidth": [1.0]}), U.Box)
