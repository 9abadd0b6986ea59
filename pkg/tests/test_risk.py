import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uccd import risk as R
from uccd import usets as U


def test_sample_stats_hand_example():
    s = R.sample_stats([0, 0, 0, 4])
    assert s.mean == 1.0
    assert s.std == pytest.approx(2.0)


def test_cvar_uniform_tail():
    x = np.random.default_rng(0).uniform(size=1_000_000)
    assert R.cvar(x, 0.9) == pytest.approx(0.95, abs=0.002)


def test_cvar_four_points():
    assert R.cvar([1, 2, 3, 4], 0.75) == pytest.approx(4.0)


def test_empirical_failure_probability():
    g = np.random.default_rng(0).normal(-1.0, 0.5, 1_000_000)
    assert R.empirical_failure_prob(g) == pytest.approx(0.0228, abs=0.001)


def test_gaussian_margin_at_two_sigma():
    assert R.gaussian_chance_margin(-1.0, 0.5, 0.02275) == pytest.approx(0.0, abs=1e-4)


def test_crra_log_limit():
    assert R.crra_utility(np.e, 1.0) == pytest.approx(1.0)
    for rho in (1 - 1e-6, 1 + 1e-6):
        assert R.crra_utility(np.e, rho) == pytest.approx(1.0, abs=1e-5)


def test_certainty_equivalent_rho_two():
    assert R.certainty_equivalent([1.0, 3.0], 2.0) == pytest.approx(1.5)


def test_discounting_concentrates_at_start():
    t = np.linspace(0.0, 1.0, 2001)
    assert R.discounted_expectation(1.0 + t, 100.0, t) == pytest.approx(1.0, rel=0.01)


def test_possibility_from_alpha_pairs():
    tri = U.Triangular(-2.0, -1.0, 1.0)
    pairs = []
    for a in np.linspace(1e-6, 1.0, 2001):
        lo, hi = U.alpha_cut(tri, a)
        pairs += [(lo, a), (hi, a)]
    assert R.possibility_of_failure(pairs) == pytest.approx(0.5, abs=1e-3)
    assert R.necessity_of_failure(pairs) == 0.0


def test_belief_plausibility_two_focal_elements():
    bpa = R.Bpa(((("a",), 0.6), (("a", "b"), 0.4)))
    assert R.belief_plausibility(bpa, {"a"}) == (0.6, 1.0)
    assert R.belief_plausibility(bpa, {"b"}) == (0.0, 0.4)


def test_fuzzy_expected_value_triangular():
    assert R.fuzzy_expected_value(U.Triangular(0.0, 1.0, 3.0)) == pytest.approx(1.25, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(0.01, 0.99))
def test_cvar_between_mean_and_max(values, gamma):
    v = np.asarray(values)
    c = R.cvar(v, gamma)
    assert v.mean() - 1e-9 <= c <= v.max() + 1e-9


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=30))
def test_bel_below_pl(values):
    items = sorted(set(round(v, 3) for v in values))
    k = len(items)
    masses = np.full(k, 1.0 / k)
    bpa = R.Bpa(tuple(((x,), m) for x, m in zip(items, masses)))
    bel, pl = R.belief_plausibility(bpa, items[: max(1, k // 2)])
    assert bel <= pl + 1e-12
