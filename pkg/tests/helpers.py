"""Shared fixtures-as-functions: random barrier/state draws per scenario family."""

import numpy as np

from stochcbf.core_types import QuadraticBarrier
from stochcbf.scenarios import (
    INTEGRATOR_SIGMA,
    OBSTACLE_CENTERS,
    OBSTACLE_RADIUS,
    PENDULUM_A,
    PENDULUM_SIGMA,
)

# Largest standard deviation of the exponent a h(F + w) we sample at. Beyond
# a few units exp(-a h) is a heavy lognormal and a 1e6-sample mean (and its
# standard error) stops being a trustworthy oracle.
MAX_EXPONENT_SD = 2.0


def _exponent_sd(bar, Sigma, F):
    A_s, b_s, _ = bar.scaled()
    grad = 2.0 * A_s @ F + b_s
    return float(np.sqrt(grad @ Sigma @ grad))


def _draw(rng, make_bar, Sigma, lo, hi):
    while True:
        bar = make_bar(rng)
        F = rng.uniform(lo, hi)
        if _exponent_sd(bar, Sigma, F) <= MAX_EXPONENT_SD:
            return bar, Sigma, F


def _affine(rng):
    bar = lambda r: QuadraticBarrier(np.zeros((1, 1)), [1.0], 0.0, scale=r.uniform(1, 50))
    return _draw(rng, bar, np.array([[0.01]]), [0.0], [3.0])


def _pendulum(rng):
    bar = lambda r: QuadraticBarrier(PENDULUM_A, [0, 0], 1.0, scale=r.uniform(1, 10), upper_bound=1.0)
    return _draw(rng, bar, PENDULUM_SIGMA, [-0.6, -0.6], [0.6, 0.6])


def _hyperbola(rng):
    bar = lambda r: QuadraticBarrier(np.diag([5.0, -1.0]), [0, 0], 0.3, scale=r.uniform(1, 20))
    return _draw(rng, bar, INTEGRATOR_SIGMA, [-3.0, -1.5], [3.0, 1.5])


def _disk(rng):
    def bar(r):
        c = np.asarray(OBSTACLE_CENTERS[r.integers(len(OBSTACLE_CENTERS))])
        return QuadraticBarrier(np.eye(2), -2 * c, c @ c - OBSTACLE_RADIUS ** 2, scale=r.uniform(1, 20))
    return _draw(rng, bar, INTEGRATOR_SIGMA, [-3.0, -1.5], [3.0, 1.5])


MOMENT_FAMILIES = {"affine": _affine, "pendulum": _pendulum, "hyperbola": _hyperbola, "disk": _disk}


def quad_form(W, A):
    return np.einsum("ij,jk,ik->i", W, A, W)


def exp_neg_h_integrand(bar, F):
    A_s, b_s, c_s = bar.scaled()
    return lambda W: np.exp(-(quad_form(F + W, A_s) + (F + W) @ b_s + c_s))


def square_quad_integrand(A, F):
    return lambda W: quad_form(F + W, A) ** 2


def random_concave_quadratic(rng, m):
    """Concave quadratic residual r(u) = (u - c)'P(u - c) + peak with P negative definite, peak > 0."""
    from stochcbf.cbf_constraints import QuadraticResidual

    X = rng.normal(size=(m, m))
    P = -(X @ X.T + 0.1 * np.eye(m))
    c = rng.normal(scale=2.0, size=m)
    peak = float(rng.uniform(0.1, 3.0))
    return QuadraticResidual(P, -2.0 * P @ c, float(c @ P @ c + peak), True)


def random_indefinite_quadratic(rng, m):
    """Quadratic residual with indefinite P that is feasible somewhere."""
    from stochcbf.cbf_constraints import QuadraticResidual

    X = rng.normal(size=(m, m))
    P = 0.5 * (X + X.T)
    p = rng.normal(size=m)
    return QuadraticResidual(P, p, float(rng.normal()), False)


def probe_ball(rng, center, radius, n):
    """Uniform samples from the ball of given radius around center."""
    m = center.shape[0]
    d = rng.normal(size=(n, m))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return center + d * radius * rng.uniform(size=(n, 1)) ** (1.0 / m)
