import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import MOMENT_FAMILIES, exp_neg_h_integrand, square_quad_integrand
from stochcbf.core_types import QuadraticBarrier
from stochcbf.gaussian_moments import (
    LambdaNotPD,
    exp_quad_moment,
    expected_exp_neg_quadratic,
    expected_quadratic,
    expected_square_centered_quadratic,
    lambda_matrix,
    log_det_term,
    log_expected_exp_neg_quadratic,
    mc_expectation_oracle,
    theta,
)
from stochcbf.scenarios import PENDULUM_A, PENDULUM_SIGMA

N_MC = 1_000_000


def pendulum_bar(a=10.0):
    return QuadraticBarrier(PENDULUM_A, [0, 0], 1.0, scale=a, upper_bound=1.0)


# -- Lambda and M --

def test_lambda_zero_A():
    assert np.array_equal(lambda_matrix(np.eye(2), np.zeros((2, 2))), 0.5 * np.eye(2))


def test_lambda_pendulum_is_pd():
    lam = lambda_matrix(PENDULUM_SIGMA, 10 * PENDULUM_A)
    assert np.allclose(lam, 0.5 * np.linalg.inv(PENDULUM_SIGMA) + 10 * PENDULUM_A, rtol=1e-14)
    assert np.all(np.linalg.eigvalsh(lam) > 0)
    assert np.linalg.inv(PENDULUM_SIGMA)[0, 0] / 2 == pytest.approx(2e4)


def test_lambda_not_pd():
    with pytest.raises(LambdaNotPD):
        lambda_matrix([[1.0]], [[-1.0]])
    with pytest.raises(LambdaNotPD):
        log_det_term([[1.0]], [[-1.0]])


def test_log_det_examples():
    assert log_det_term(np.eye(2), np.zeros((2, 2))) == 0.0
    assert log_det_term(np.eye(2), 0.5 * np.eye(2)) == pytest.approx(np.log(2.0), rel=1e-14)
    M = log_det_term(PENDULUM_SIGMA, 10 * PENDULUM_A)
    assert np.isfinite(M) and M < 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_log_det_matches_determinant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    X = rng.normal(size=(n, n))
    S = X @ X.T + 0.1 * np.eye(n)
    Y = rng.normal(size=(n, n))
    A = 0.05 * (Y + Y.T)
    try:
        mom = exp_quad_moment(S, A)
    except LambdaNotPD:
        return
    det = np.linalg.det(np.eye(n) + 2 * S @ A)
    assert np.exp(-2 * mom.log_det_term) == pytest.approx(1 / det, rel=1e-10)


# -- Theta --

def test_theta_affine_case():
    S = np.array([[0.3, 0.1], [0.1, 0.2]])
    b = np.array([1.0, -2.0])
    lam = lambda_matrix(S, np.zeros((2, 2)))
    assert theta([0.4, 0.7], np.zeros((2, 2)), b, lam) == pytest.approx(0.5 * b @ S @ b, rel=1e-13)


def test_theta_zero_vector():
    A = np.diag([1.0, 2.0])
    F = np.array([0.5, -0.25])
    b = -2 * A @ F
    assert theta(F, A, b, lambda_matrix(np.eye(2), A)) == pytest.approx(0.0, abs=1e-15)


def test_theta_affine_1d():
    lam = lambda_matrix([[0.01]], [[0.0]])
    assert theta([0.7], [[0.0]], [50.0], lam) == pytest.approx(12.5, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_theta_nonnegative(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=2)
    b = rng.normal(size=2)
    A = 10 * PENDULUM_A
    assert theta(F, A, b, exp_quad_moment(PENDULUM_SIGMA, A)) >= 0


# -- E[exp(-a h)] --

def test_exp_moment_scalar_lognormal():
    bar = QuadraticBarrier(np.zeros((1, 1)), [1.0], 0.0)
    assert expected_exp_neg_quadratic(bar, [[1.0]], [0.0]) == pytest.approx(np.exp(0.5), rel=1e-14)


def test_exp_moment_constant_barrier():
    bar = QuadraticBarrier(np.zeros((2, 2)), [0, 0], 0.7, scale=3.0)
    assert expected_exp_neg_quadratic(bar, np.eye(2), [1.0, 2.0]) == pytest.approx(np.exp(-2.1))


def test_exp_moment_log_space_no_overflow():
    bar = QuadraticBarrier(np.zeros((1, 1)), [1.0], 0.0, scale=50.0)
    # a h = -1000 would overflow exp; the log form stays finite
    val = log_expected_exp_neg_quadratic(bar, [[0.01]], [-20.0])
    assert val == pytest.approx(1000 + 12.5, rel=1e-14)


def test_exp_moment_pendulum_vs_oracle():
    bar = pendulum_bar()
    closed = expected_exp_neg_quadratic(bar, PENDULUM_SIGMA, [0.0, 0.0])
    mean, se = mc_expectation_oracle(exp_neg_h_integrand(bar, np.zeros(2)), PENDULUM_SIGMA, N_MC, seed=11)
    assert abs(closed - mean) <= 3 * se


def test_square_moment_examples():
    assert expected_square_centered_quadratic(np.zeros((2, 2)), np.eye(2), [0.3, 0.1]) == 0.0
    assert expected_square_centered_quadratic(np.eye(2), np.eye(2), [0, 0]) == pytest.approx(8.0)


def test_square_moment_pendulum_vs_oracle():
    F = np.array([0.1, 0.05])
    closed = expected_square_centered_quadratic(PENDULUM_A, PENDULUM_SIGMA, F)
    mean, se = mc_expectation_oracle(square_quad_integrand(PENDULUM_A, F), PENDULUM_SIGMA, N_MC, seed=12)
    assert abs(closed - mean) <= 3 * se


def test_expected_quadratic():
    A = np.diag([2.0, -1.0])
    S = np.diag([0.5, 0.25])
    assert expected_quadratic(A, S, [1.0, 1.0]) == pytest.approx(1.0 + 0.75)


@pytest.mark.parametrize("family", sorted(MOMENT_FAMILIES))
def test_closed_forms_vs_oracle_by_family(family):
    rng = np.random.default_rng(hash(family) % 2**32)
    for i in range(5):
        bar, S, F = MOMENT_FAMILIES[family](rng)
        closed = expected_exp_neg_quadratic(bar, S, F)
        assert closed > 0
        mean, se = mc_expectation_oracle(exp_neg_h_integrand(bar, F), S, 200_000, seed=i)
        assert abs(closed - mean) <= 4 * se
        A_s = bar.scaled()[0]
        closed = expected_square_centered_quadratic(A_s, S, F)
        mean, se = mc_expectation_oracle(square_quad_integrand(A_s, F), S, 200_000, seed=100 + i)
        assert abs(closed - mean) <= 4 * se + 1e-15 * abs(closed)


def test_exp_moment_monotone_in_scale():
    # A NSD and h(F) < 0: larger a only makes exp(-a h) larger
    F = np.array([0.9, 0.6])
    base = pendulum_bar(1.0)
    assert base(F) < 0
    vals = [expected_exp_neg_quadratic(base.with_scale(a), PENDULUM_SIGMA, F)
            for a in np.linspace(1, 50, 50)]
    assert np.all(np.diff(vals) >= 0)


# -- oracle --

def test_oracle_constant():
    assert mc_expectation_oracle(lambda W: np.ones(len(W)), [[1.0]], 1000) == (1.0, 0.0)


def test_oracle_symmetry_and_lognormal():
    mean, se = mc_expectation_oracle(lambda W: W[:, 0], [[1.0]], N_MC, seed=3)
    assert abs(mean) <= 4 * se
    mean, se = mc_expectation_oracle(lambda W: np.exp(-W[:, 0]), [[1.0]], N_MC, seed=4)
    assert abs(mean - np.exp(0.5)) <= 4 * se


def test_oracle_deterministic_per_seed():
    f = lambda W: np.sin(W).sum(axis=1)
    assert mc_expectation_oracle(f, np.eye(2), 10_000, seed=5) == mc_expectation_oracle(f, np.eye(2), 10_000, seed=5)


def test_oracle_reports_bad_sample():
    with pytest.raises(FloatingPointError, match="sample 0"):
        mc_expectation_oracle(lambda W: np.full(len(W), np.nan), [[1.0]], 10)
    with pytest.raises(ValueError):
        mc_expectation_oracle(lambda W: W[:, 0], [[1.0]], 1)
