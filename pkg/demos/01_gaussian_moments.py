"""Closed-form Gaussian moments of a quadratic barrier, checked against sampling.

Every filter in the package rests on two expectations over the next state
x+ = F + w with w ~ N(0, Sigma):

    E[exp(-a h(x+))]          (exp-quadratic condition)
    E[(x+' A x+)^2]           (polynomial condition)

Both have closed forms. This script evaluates them for a pendulum-like
barrier and compares with a plain Monte-Carlo average.
"""

import numpy as np

from stochcbf import (
    QuadraticBarrier,
    expected_exp_neg_quadratic,
    expected_square_centered_quadratic,
    mc_expectation_oracle,
)

A = -np.array([[1.0 / 0.3 ** 2, 0.5 / 0.3 ** 2], [0.5 / 0.3 ** 2, 1.0 / 0.3 ** 2]])
Sigma = np.diag([1e-4, 4e-4])
F = np.array([0.05, -0.08])

for a in (1.0, 5.0, 10.0):
    bar = QuadraticBarrier(A, [0.0, 0.0], 1.0, scale=a)
    A_s, b_s, c_s = bar.scaled()
    closed = expected_exp_neg_quadratic(bar, Sigma, F)

    def integrand(W):
        X = F + W
        return np.exp(-(np.einsum("ij,jk,ik->i", X, A_s, X) + X @ b_s + c_s))

    mean, se = mc_expectation_oracle(integrand, Sigma, 1_000_000, seed=1)
    print(f"a = {a:4.1f}  E[exp(-a h)]  closed {closed:.8f}  MC {mean:.8f} +- {se:.1e}"
          f"  ({abs(closed - mean) / se:.2f} se)")

closed = expected_square_centered_quadratic(A, Sigma, F)
mean, se = mc_expectation_oracle(lambda W: np.einsum("ij,jk,ik->i", F + W, A, F + W) ** 2,
                                 Sigma, 1_000_000, seed=2)
print(f"E[(x'Ax)^2]  closed {closed:.8f}  MC {mean:.8f} +- {se:.1e}"
      f"  ({abs(closed - mean) / se:.2f} se)")
