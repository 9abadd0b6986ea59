import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import solve_continuous_are

from uccd import dynamics as D
from uccd import usets as U


def test_em_decay_without_noise():
    model = D.SdeModel.linear([[-1.0]])
    ens = D.euler_maruyama(model, [1.0], np.linspace(0.0, 1.0, 10_001), n_paths=1)
    assert ens.paths[0, -1, 0] == pytest.approx(np.exp(-1.0), abs=1e-3)


def test_brownian_variance_grows_linearly():
    model = D.SdeModel.linear([[0.0]], diffusion=[[1.0]])
    ens = D.euler_maruyama(model, [0.0], np.linspace(0.0, 1.0, 101), n_paths=10_000, seed=3)
    assert ens.std[-1, 0] ** 2 == pytest.approx(1.0, rel=0.05)
    assert ens.std[50, 0] ** 2 == pytest.approx(0.5, rel=0.05)


def test_noise_block_is_seeded():
    a = D.noise_block(11, 4, 5, 2)
    np.testing.assert_array_equal(a, D.noise_block(11, 4, 5, 2))
    assert not np.array_equal(a, D.noise_block(12, 4, 5, 2))


def test_scalar_riccati_root():
    spec = D.LqrSpec.scalar(1.0, 1.0, 1.0, 1.0)
    P = D.solve_care(spec)
    assert P[0, 0] == pytest.approx(1.0 + np.sqrt(2.0), abs=1e-8)
    assert D.care_residual(spec, P) <= 1e-8


def test_doubling_q_follows_root():
    # 2p - p^2 + 2 = 0 has positive root 1 + sqrt(3)
    spec = D.LqrSpec.scalar(1.0, 1.0, 2.0, 1.0)
    P = D.solve_care(spec)
    assert P[0, 0] == pytest.approx(1.0 + np.sqrt(3.0), abs=1e-8)
    assert D.care_residual(spec, P) <= 1e-8


def test_matches_reference_care_solver_in_two_dimensions():
    A = np.array([[0.0, 1.0], [2.0, -1.0]])
    B = np.array([[0.0], [1.0]])
    Q, R = np.diag([3.0, 1.0]), np.array([[0.5]])
    P = D.solve_care(D.LqrSpec(A, B, Q, R))
    np.testing.assert_allclose(P, solve_continuous_are(A, B, Q, R), atol=1e-10)


def test_unstabilizable_pair_rejected():
    spec = D.LqrSpec(np.array([[1.0]]), np.array([[0.0]]), np.array([[1.0]]), np.array([[1.0]]))
    with pytest.raises(D.NotStabilizableError):
        D.solve_care(spec)


@settings(max_examples=30, deadline=None)
@given(st.floats(-2.0, 2.0), st.floats(0.2, 3.0), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_scalar_care_closed_form(a, b, q, r):
    # p = r (a + sqrt(a^2 + b^2 q / r)) / b^2
    P = D.solve_care(D.LqrSpec.scalar(a, b, q, r))
    expect = r * (a + np.sqrt(a * a + b * b * q / r)) / (b * b)
    assert P[0, 0] == pytest.approx(expect, rel=1e-9, abs=1e-10)


def test_zero_noise_spread_collapses():
    spec = D.LqrSpec.scalar()
    ens = D.lqr_rollout_ensemble(spec, None, [U.Gaussian(1.0, 0.5)], n_paths=2000, seed=0)
    std = ens.std[:, 0]
    assert np.all(np.diff(std) <= 1e-12)
    assert std[-1] < 0.05 * std[0]


def test_feedback_beats_open_loop_with_noise():
    # stable a = -1: open loop stationary std is sigma / sqrt(2), closed loop sigma / sqrt(2 sqrt(2))
    spec = D.LqrSpec.scalar(a=-1.0)
    grid = np.linspace(0.0, 8.0, 801)
    kw = dict(noise=[[1.0]], x0=[0.0], grid=grid, n_paths=10_000, seed=4)
    closed = D.lqr_rollout_ensemble(spec, feedback=True, **kw)
    opened = D.lqr_rollout_ensemble(spec, feedback=False, **kw)
    assert closed.std[-1, 0] < opened.std[-1, 0]
    assert opened.std[-1, 0] == pytest.approx(np.sqrt(0.5), rel=0.05)
    assert closed.std[-1, 0] == pytest.approx(1.0 / np.sqrt(2.0 * np.sqrt(2.0)), rel=0.05)
