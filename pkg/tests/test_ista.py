import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import cd_lasso
from ulmsr.grid import GridSpec, InvalidParameterError, PsfModel
from ulmsr.ista import ForwardOp, IstaConfig, StepSizeError, objective, ista_solve, power_iteration_L, soft_threshold


def small_op(r=2, sigma=1.0, n_lr=8):
    return ForwardOp(GridSpec(n_lr, n_lr, r, 31.25 * r), PsfModel(sigma))


def test_soft_threshold_examples():
    np.testing.assert_array_equal(soft_threshold(np.array([-2.0, 0.5, 3.0]), 1.0), [-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(soft_threshold(np.array([-2.0, 0.5, 3.0]), 1.0, nonneg=True), [0.0, 0.0, 2.0])
    with pytest.raises(InvalidParameterError):
        soft_threshold(np.ones(2), -1.0)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=20), st.floats(0, 5))
def test_soft_threshold_is_prox(v, tau):
    v = np.array(v)
    s = soft_threshold(v, tau)
    assert np.all(np.abs(s) <= np.abs(v))
    assert np.all(np.abs(s - v) <= tau + 1e-12)


def test_matrix_matches_operator():
    op = small_op()
    rng = np.random.default_rng(0)
    x = rng.standard_normal(op.hr_shape)
    np.testing.assert_allclose(op.matrix() @ x.ravel(), op(x).ravel(), rtol=1e-12, atol=1e-12)


def test_matrix_mode_limit():
    with pytest.raises(InvalidParameterError):
        small_op(r=4, n_lr=16).matrix()


def test_delta_gives_sampled_psf():
    op = small_op(r=2)
    x = np.zeros(op.hr_shape)
    x[7, 9] = 1.0  # HR (9, 7) -> LR (4.25, 3.25)
    lx = np.arange(8)
    expect = np.exp(-0.5 * (lx[:, None] - 3.25) ** 2) * np.exp(-0.5 * (lx[None, :] - 4.25) ** 2)
    np.testing.assert_allclose(op(x), expect, rtol=1e-13)


def test_power_iteration_matches_eigvalsh():
    op = small_op()
    M = op.matrix()
    L_true = np.linalg.eigvalsh(M.T @ M)[-1]
    L, hist = power_iteration_L(op, 200, return_history=True)
    assert abs(L - L_true) / L_true < 1e-8
    assert all(b >= a - 1e-12 for a, b in zip(hist, hist[1:]))


def test_zero_input_gives_zero():
    op = small_op()
    x = ista_solve(np.zeros(op.lr_shape), op)
    assert not x.any()


def test_step_size_guard():
    op = small_op()
    L = power_iteration_L(op, 200)
    with pytest.raises(StepSizeError):
        ista_solve(np.ones(op.lr_shape), op, IstaConfig(mu=1.01 / L), L=L)


def test_large_step_increases_objective_raises():
    op = small_op()
    L = power_iteration_L(op, 200)
    y = op(np.pad(np.ones((2, 2)), 7))
    # bypass the upfront check by lying about L; the monotonicity guard must fire
    with pytest.raises(StepSizeError):
        ista_solve(y, op, IstaConfig(mu=2.5 / L, lam=1e-4), L=L / 3)


def test_single_source_recovered_near_truth():
    op = small_op(r=2)
    x0 = np.zeros(op.hr_shape)
    x0[6, 10] = 1.0
    x = ista_solve(op(x0), op, IstaConfig(lam=1e-3, max_iters=20000, tol=1e-10))
    assert np.unravel_index(np.argmax(x), x.shape) == (6, 10)


@pytest.mark.parametrize("nonneg", [True, False])
def test_matches_coordinate_descent_small(nonneg):
    op = small_op(r=2, n_lr=4)
    rng = np.random.default_rng(5)
    x0 = np.zeros(op.hr_shape)
    x0.flat[rng.choice(x0.size, 2, replace=False)] = rng.uniform(0.5, 1, 2)
    y = op(x0) + 0.01 * rng.standard_normal(op.lr_shape)
    cfg = IstaConfig(lam=0.01, nonneg=nonneg, max_iters=200000, tol=1e-13)
    x = ista_solve(y, op, cfg)
    _, ref = cd_lasso(op.matrix(), y, 0.01, nonneg=nonneg)
    assert abs(objective(y, x, op, 0.01) - ref) < 1e-6
