import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import quad_form
from stochcbf.cbf_constraints import (
    AlphaOutOfRange,
    CMartingale,
    ExpQuadratic,
    LinearZeroing,
    PolynomialSquared,
    UnsupportedBarrierForm,
    affine_condition_residual,
    c_martingale_residual,
    condition_from_dict,
    condition_residual,
    condition_to_dict,
    convexity_certificate,
    exp_quadratic_condition_residual,
    linear_condition_residual,
    max_feasible_alpha,
    max_feasible_beta_poly,
    polynomial_condition_residual,
    printed_beta_poly,
    residual_model,
)
from stochcbf.core_types import ContractViolation, QuadraticBarrier, drift_eval, make_dynamics
from stochcbf.gaussian_moments import LambdaNotPD, mc_expectation_oracle
from stochcbf.scenarios import INTEGRATOR_SIGMA, PENDULUM_A, PENDULUM_SIGMA

DT = 0.01
TR_AS = float(np.trace(PENDULUM_A @ PENDULUM_SIGMA))
# Tr((A Sigma)^2) and the pinned default beta of the squared condition
TR_AS2 = float(np.trace(PENDULUM_A @ PENDULUM_SIGMA @ PENDULUM_A @ PENDULUM_SIGMA))
BETA_POLY = 1.6309360688371913e-05


def pendulum():
    return make_dynamics("pendulum", PENDULUM_SIGMA, dt=DT)


def pend_bar(a=1.0):
    return QuadraticBarrier(PENDULUM_A, [0, 0], 1.0, scale=a, upper_bound=1.0)


def integrator_1d(var=0.01):
    return make_dynamics("integrator", [[var]], dim=1, dt=DT)


def affine_bar(a=50.0):
    return QuadraticBarrier(np.zeros((1, 1)), [1.0], 0.0, scale=a)


def hyperbola_bar(a=20.0):
    return QuadraticBarrier(np.diag([5.0, -1.0]), [0, 0], 0.3, scale=a)


def integrator_2d():
    return make_dynamics("integrator", INTEGRATOR_SIGMA, dim=2, dt=DT)


def test_trace_value():
    assert TR_AS == pytest.approx(-2.371e-3, rel=1e-3)


# -- linear --

def test_linear_residual_examples():
    sys, bar = pendulum(), pend_bar()
    alpha = 1 + TR_AS
    assert linear_condition_residual(LinearZeroing(alpha), sys, bar, [0, 0], [0]) == pytest.approx(0, abs=1e-15)
    assert linear_condition_residual(LinearZeroing(0.5), sys, bar, [0, 0], [0]) == pytest.approx(0.5 + TR_AS)
    assert 0.5 + TR_AS == pytest.approx(0.4976, abs=1e-4)
    # affine h: no trace term
    r = linear_condition_residual(LinearZeroing(0.9), integrator_1d(), affine_bar(1.0), [1.0], [2.0])
    assert r == pytest.approx(1.02 - 0.9)


# -- c-martingale: E[h(x+)] >= h(x) - beta --

def test_c_martingale_examples():
    sys, bar = integrator_1d(), affine_bar(1.0)
    assert c_martingale_residual(CMartingale(0.0), sys, bar, [1.0], [0.0]) == 0.0
    assert c_martingale_residual(CMartingale(0.0), sys, bar, [1.0], [1.0]) == pytest.approx(0.01)
    r = c_martingale_residual(CMartingale(0.0), pendulum(), pend_bar(), [0, 0], [0])
    assert r == pytest.approx(TR_AS, rel=1e-12)
    r = c_martingale_residual(CMartingale(1e-3), pendulum(), pend_bar(), [0, 0], [0])
    assert r == pytest.approx(TR_AS + 1e-3, rel=1e-12)


# -- polynomial --

def test_poly_residual_at_origin():
    sys, bar = pendulum(), pend_bar()
    beta = max_feasible_beta_poly(bar, PENDULUM_SIGMA)
    assert polynomial_condition_residual(PolynomialSquared(beta), sys, bar, [0, 0], [0]) == pytest.approx(0, abs=1e-20)
    # the printed choice of beta leaves -Tr((A Sigma)^2)
    beta_p = printed_beta_poly(bar, PENDULUM_SIGMA)
    r = polynomial_condition_residual(PolynomialSquared(beta_p), sys, bar, [0, 0], [0])
    assert r == pytest.approx(-TR_AS2, rel=1e-10)


def test_poly_residual_zero_A():
    sys = integrator_1d()
    bar = QuadraticBarrier(np.zeros((1, 1)), [0.0], 1.0, upper_bound=1.0)
    assert polynomial_condition_residual(PolynomialSquared(3e-4), sys, bar, [0.3], [1.0]) == pytest.approx(3e-4)


def test_poly_rejects_unsupported_form():
    sys = pendulum()
    with pytest.raises(UnsupportedBarrierForm):
        polynomial_condition_residual(PolynomialSquared(0.0), sys,
                                      QuadraticBarrier(PENDULUM_A, [0.1, 0], 1.0, upper_bound=2.0), [0, 0], [0])
    with pytest.raises(UnsupportedBarrierForm):
        polynomial_condition_residual(PolynomialSquared(0.0), sys,
                                      QuadraticBarrier(PENDULUM_A, [0, 0], 1.0, upper_bound=2.0), [0, 0], [0])


def test_poly_residual_vs_oracle():
    sys, bar = pendulum(), pend_bar()
    x, u, beta = np.array([0.2, 0.0]), np.array([0.0]), 1e-5
    F = drift_eval(sys, x, u)
    r = polynomial_condition_residual(PolynomialSquared(beta), sys, bar, x, u)
    mean, se = mc_expectation_oracle(lambda W: quad_form(F + W, PENDULUM_A) ** 2, PENDULUM_SIGMA, 1_000_000, seed=21)
    lhs = (bar(x) - 1.0) ** 2 + beta
    assert abs(r - (lhs - mean)) <= 4 * se


# -- exp-quadratic --

def test_exp_quad_affine_example():
    r = exp_quadratic_condition_residual(ExpQuadratic(1e-4), integrator_1d(), affine_bar(), [1.0], [0.0])
    assert r == pytest.approx(50 * 1.0 - 12.5 + np.log(np.exp(-50) + 1e-4), rel=1e-13)
    assert r == pytest.approx(28.29, abs=5e-3)


def test_exp_quad_constant_barrier_identity():
    bar = QuadraticBarrier(np.zeros((1, 1)), [0.0], 0.7, scale=3.0)
    assert exp_quadratic_condition_residual(ExpQuadratic(0.0), integrator_1d(), bar, [0.2], [1.0]) == pytest.approx(0, abs=1e-15)


def test_exp_quad_pendulum_feasible_at_origin():
    r = exp_quadratic_condition_residual(ExpQuadratic(1e-5), pendulum(), pend_bar(10.0), [0, 0], [0])
    assert r >= 0


def test_exp_quad_lambda_not_pd():
    sys = integrator_1d(var=1.0)
    bar = QuadraticBarrier(-np.ones((1, 1)), [0.0], 1.0, scale=1.0)
    with pytest.raises(LambdaNotPD):
        exp_quadratic_condition_residual(ExpQuadratic(0.0), sys, bar, [0.0], [0.0])


def test_exp_quad_scale_is_reparameterization():
    sys = pendulum()
    a = 7.0
    pre = QuadraticBarrier(a * PENDULUM_A, [0, 0], a * 1.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, u = rng.uniform(-0.4, 0.4, 2), rng.normal(size=1)
        assert (exp_quadratic_condition_residual(ExpQuadratic(1e-4), sys, pend_bar(a), x, u)
                == exp_quadratic_condition_residual(ExpQuadratic(1e-4), sys, pre, x, u))


# -- affine specialization --

def test_affine_examples():
    sys = integrator_1d()
    r = affine_condition_residual(ExpQuadratic(1e-4), sys, affine_bar(), [1.0], [0.0])
    assert r == pytest.approx(28.29, abs=5e-3)
    # boundary x = 0 with F = 0
    r = affine_condition_residual(ExpQuadratic(1e-4), sys, affine_bar(), [0.0], [0.0])
    assert r == pytest.approx(np.log(1 + 1e-4) - 12.5, rel=1e-13)
    flat = QuadraticBarrier(np.zeros((1, 1)), [0.0], 0.4, scale=5.0)
    assert affine_condition_residual(ExpQuadratic(1e-3), sys, flat, [0.1], [0.3]) >= 0
    with pytest.raises(UnsupportedBarrierForm):
        affine_condition_residual(ExpQuadratic(0.0), pendulum(), pend_bar(), [0, 0], [0])


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_affine_matches_exp_quad(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    S = np.diag(rng.uniform(1e-3, 0.1, n))
    sys = make_dynamics("integrator", S, dim=n, dt=DT)
    bar = QuadraticBarrier(np.zeros((n, n)), rng.normal(size=n), rng.normal(), scale=rng.uniform(1, 50))
    x, u = rng.normal(size=n), rng.normal(size=n)
    cond = ExpQuadratic(rng.uniform(0, 1e-3))
    a = affine_condition_residual(cond, sys, bar, x, u)
    b = exp_quadratic_condition_residual(cond, sys, bar, x, u)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


# -- parameter helpers --

def test_max_feasible_alpha():
    assert max_feasible_alpha(pend_bar(), PENDULUM_SIGMA) == pytest.approx(0.9976291, abs=1e-7)
    with pytest.raises(AlphaOutOfRange):
        max_feasible_alpha(QuadraticBarrier(np.zeros((1, 1)), [1.0], 0.0), [[1.0]])
    half = QuadraticBarrier(-0.5 * np.ones((1, 1)), [0.0], 1.0)
    assert max_feasible_alpha(half, [[1.0]]) == 0.5


def test_max_feasible_beta_poly():
    zero = QuadraticBarrier(np.zeros((1, 1)), [0.0], 1.0, upper_bound=1.0)
    assert max_feasible_beta_poly(zero, [[1.0]]) == 0.0
    # Sigma = I, A = -I (n = 1): 2 Tr((AS)^2) + Tr(AS)^2 = 3; the printed variant gives 2
    neg = QuadraticBarrier(-np.ones((1, 1)), [0.0], 1.0, upper_bound=1.0)
    assert max_feasible_beta_poly(neg, [[1.0]]) == 3.0
    assert printed_beta_poly(neg, [[1.0]]) == 2.0
    assert max_feasible_beta_poly(pend_bar(), PENDULUM_SIGMA) == pytest.approx(BETA_POLY, rel=1e-12)
    assert BETA_POLY == pytest.approx(2 * TR_AS2 + TR_AS ** 2, rel=1e-12)
    with pytest.raises(UnsupportedBarrierForm):
        max_feasible_beta_poly(QuadraticBarrier(PENDULUM_A, [0.1, 0], 1.0), PENDULUM_SIGMA)


def test_convexity_certificate():
    assert convexity_certificate(QuadraticBarrier(np.zeros((2, 2)), [1, 0], 0.0), INTEGRATOR_SIGMA) == "convex"
    assert convexity_certificate(pend_bar(10.0), PENDULUM_SIGMA) == "convex"
    assert convexity_certificate(hyperbola_bar(), INTEGRATOR_SIGMA) == "not_certified"
    with pytest.raises(LambdaNotPD):
        convexity_certificate(QuadraticBarrier(-np.ones((1, 1)), [0.0], 1.0), [[1.0]])


def test_condition_contracts_and_json():
    with pytest.raises(AlphaOutOfRange):
        LinearZeroing(1.0)
    for cls in (CMartingale, PolynomialSquared, ExpQuadratic):
        with pytest.raises(ContractViolation):
            cls(-1e-9)
    for cond in (LinearZeroing(0.5, 1), CMartingale(1e-3), PolynomialSquared(2e-5), ExpQuadratic(1e-4, 2)):
        assert condition_from_dict(condition_to_dict(cond)) == cond
    with pytest.raises(ContractViolation):
        condition_from_dict({"variant": "nope"})


# -- residual models agree with pointwise residuals --

CASES = [
    ("pendulum", LinearZeroing(0.99), pend_bar()),
    ("pendulum", CMartingale(1e-3), pend_bar()),
    ("pendulum", PolynomialSquared(1e-5), pend_bar()),
    ("pendulum", ExpQuadratic(1e-5), pend_bar(10.0)),
    ("integrator", ExpQuadratic(1e-4), hyperbola_bar()),
]


def _system(name):
    return pendulum() if name == "pendulum" else integrator_2d()


@pytest.mark.parametrize("sysname,cond,bar", CASES)
def test_model_matches_pointwise(sysname, cond, bar):
    sys = _system(sysname)
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.uniform(-0.5, 0.5, 2)
        u = rng.normal(size=sys.input_dim) * 3
        model = residual_model(cond, sys, bar, x)
        direct = condition_residual(cond, sys, bar, x, u)
        assert model(u) == pytest.approx(direct, rel=1e-9, abs=1e-11)
        # analytic gradient vs central differences
        eps = 1e-6
        fd = [(model(u + eps * e) - model(u - eps * e)) / (2 * eps) for e in np.eye(sys.input_dim)]
        assert np.allclose(model.gradient(u), fd, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("sysname,cond,bar", CASES[:4])
def test_certified_residuals_are_concave(sysname, cond, bar):
    sys = _system(sysname)
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.uniform(-0.5, 0.5, 2)
        u1, u2 = rng.normal(size=1) * 5, rng.normal(size=1) * 5
        lam = rng.uniform()
        assert residual_model(cond, sys, bar, x).certified_concave
        mid = condition_residual(cond, sys, bar, x, lam * u1 + (1 - lam) * u2)
        ends = lam * condition_residual(cond, sys, bar, x, u1) + (1 - lam) * condition_residual(cond, sys, bar, x, u2)
        assert -mid <= -ends + 1e-9


def _defining_gap(cond, sys, bar, x, u, n, seed):
    """Monte-Carlo estimate (and std error) of the condition's defining inequality, rhs side positive when satisfied."""
    F = drift_eval(sys, x, u)
    A_s, b_s, c_s = bar.scaled()
    h_s = bar.scale * bar(x)

    def h_next(W):
        return quad_form(F + W, A_s) + (F + W) @ b_s + c_s

    if isinstance(cond, LinearZeroing):
        mean, se = mc_expectation_oracle(h_next, sys.noise_cov, n, seed)
        return mean - cond.alpha * h_s, se
    if isinstance(cond, CMartingale):
        mean, se = mc_expectation_oracle(h_next, sys.noise_cov, n, seed)
        return mean - h_s + cond.beta, se
    if isinstance(cond, PolynomialSquared):
        B = bar.scale * bar.upper_bound
        mean, se = mc_expectation_oracle(lambda W: (h_next(W) - B) ** 2, sys.noise_cov, n, seed)
        return (h_s - B) ** 2 + cond.beta - mean, se
    mean, se = mc_expectation_oracle(lambda W: np.exp(-h_next(W)), sys.noise_cov, n, seed)
    return np.exp(-h_s) + cond.beta - mean, se


@pytest.mark.parametrize("sysname,cond,bar", CASES)
def test_residual_sign_matches_oracle(sysname, cond, bar):
    sys = _system(sysname)
    rng = np.random.default_rng(3)
    checked = 0
    for i in range(30):
        x = rng.uniform(-0.3, 0.3, 2)
        if bar(x) < 0:
            continue
        model = residual_model(cond, sys, bar, x)
        u = rng.normal(size=sys.input_dim) * (0.2 if sysname == "pendulum" else 2.0)
        gap, se = _defining_gap(cond, sys, bar, x, u, 100_000, seed=i)
        if abs(gap) < 5 * se:
            continue
        checked += 1
        assert np.sign(model(u)) == np.sign(gap)
    assert checked >= 10
