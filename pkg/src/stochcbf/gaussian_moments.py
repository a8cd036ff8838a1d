"""Closed-form Gaussian expectations of barrier transforms, and an MC oracle.

For w ~ N(0, S) and a (scaled) quadratic barrier h(x) = x'Ax + b'x + c::

    E[exp(-h(F + w))] = exp(-h(F) + theta - M)
    Lambda = S^{-1}/2 + A
    theta  = (AF + b/2)' Lambda^{-1} (AF + b/2)
    M      = log det(I + 2 S A) / 2

Everything is kept in log space until the caller asks for the value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

__all__ = [
    "LambdaNotPD",
    "ExpQuadMoment",
    "lambda_matrix",
    "log_det_term",
    "exp_quad_moment",
    "theta",
    "log_expected_exp_neg_quadratic",
    "expected_exp_neg_quadratic",
    "expected_square_centered_quadratic",
    "expected_quadratic",
    "mc_expectation_oracle",
]


class LambdaNotPD(ValueError):
    """S^{-1}/2 + aA is not positive definite; the closed form does not exist."""


def _cho(mat: np.ndarray, what: str):
    try:
        return cho_factor(mat, lower=True, check_finite=True)
    except LinAlgError:
        raise LambdaNotPD(f"{what} is not positive definite") from None


def _as_matrix(m) -> np.ndarray:
    return np.atleast_2d(np.asarray(m, dtype=float))


@dataclass(frozen=True)
class ExpQuadMoment:
    lambda_mat: np.ndarray
    log_det_term: float
    _chol: tuple

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Lambda^{-1} v."""
        return cho_solve(self._chol, v)


def _inv_spd(S: np.ndarray) -> np.ndarray:
    c = cho_factor(S, lower=True)
    return cho_solve(c, np.eye(S.shape[0]))


def exp_quad_moment(Sigma, A_s) -> ExpQuadMoment:
    """Lambda and M for covariance ``Sigma`` and scaled quadratic coefficient ``A_s``."""
    S = _as_matrix(Sigma)
    A_s = _as_matrix(A_s)
    lam = 0.5 * _inv_spd(S) + A_s
    lam = 0.5 * (lam + lam.T)
    chol = _cho(lam, "Lambda")
    if not np.any(A_s):
        return ExpQuadMoment(lam, 0.0, chol)
    # det(I + 2 S A) = det(2 S) det(Lambda), both factors from Cholesky
    cs = cho_factor(S, lower=True)
    logdet = (S.shape[0] * np.log(2.0) + 2.0 * np.sum(np.log(np.diag(cs[0])))
              + 2.0 * np.sum(np.log(np.diag(chol[0]))))
    return ExpQuadMoment(lam, 0.5 * float(logdet), chol)


def lambda_matrix(Sigma, A_s) -> np.ndarray:
    """Sigma^{-1}/2 + A_s; raises `LambdaNotPD` if the sum is not PD."""
    return exp_quad_moment(Sigma, A_s).lambda_mat


def log_det_term(Sigma, A_s) -> float:
    """M = log det(I + 2 Sigma A_s) / 2."""
    return exp_quad_moment(Sigma, A_s).log_det_term


def theta(F_val, A_s, b_s, Lam) -> float:
    """(A_s F + b_s/2)' Lam^{-1} (A_s F + b_s/2).

    ``Lam`` may be a matrix or an `ExpQuadMoment` (reuses its factorization).
    """
    v = _as_matrix(A_s) @ np.atleast_1d(np.asarray(F_val, dtype=float)) \
        + 0.5 * np.atleast_1d(np.asarray(b_s, dtype=float))
    if isinstance(Lam, ExpQuadMoment):
        return float(v @ Lam.solve(v))
    return float(v @ cho_solve(_cho(_as_matrix(Lam), "Lambda"), v))


def log_expected_exp_neg_quadratic(bar, Sigma, F_val) -> float:
    """log E[exp(-a h(F + w))], w ~ N(0, Sigma)."""
    A_s, b_s, c_s = bar.scaled()
    mom = exp_quad_moment(Sigma, A_s)
    F = np.atleast_1d(np.asarray(F_val, dtype=float))
    h_s = F @ A_s @ F + b_s @ F + c_s
    return float(-h_s + theta(F, A_s, b_s, mom) - mom.log_det_term)


def expected_exp_neg_quadratic(bar, Sigma, F_val) -> float:
    return float(np.exp(log_expected_exp_neg_quadratic(bar, Sigma, F_val)))


def expected_quadratic(A, Sigma, F_val) -> float:
    """E[(F+w)'A(F+w)] = F'AF + Tr(A Sigma)."""
    A = _as_matrix(A)
    F = np.atleast_1d(np.asarray(F_val, dtype=float))
    return float(F @ A @ F + np.trace(A @ _as_matrix(Sigma)))


def expected_square_centered_quadratic(A, Sigma, F_val) -> float:
    """E[((F+w)'A(F+w))^2] for w ~ N(0, Sigma)."""
    A = _as_matrix(A)
    S = _as_matrix(Sigma)
    F = np.atleast_1d(np.asarray(F_val, dtype=float))
    AS = A @ S
    q = F @ A @ F
    tr = np.trace(AS)
    AF = A @ F
    return float(q * q + 4.0 * AF @ S @ AF + 2.0 * q * tr + 2.0 * np.trace(AS @ AS) + tr * tr)


def mc_expectation_oracle(integrand, Sigma, n_samples: int = 1_000_000, seed: int = 0,
                          batch: int = 200_000) -> tuple[float, float]:
    """Sample mean and standard error of ``integrand`` over w ~ N(0, Sigma).

    ``integrand`` is vectorized: it takes an (N, n) array of draws and returns
    N values. Draws are ``L z`` with z from numpy's PCG64 standard normal
    (ziggurat) stream seeded by ``seed``.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    S = _as_matrix(Sigma)
    L = np.linalg.cholesky(S)
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    shift = None
    done = 0
    while done < n_samples:
        k = min(batch, n_samples - done)
        w = rng.standard_normal((k, S.shape[0])) @ L.T
        vals = np.asarray(integrand(w), dtype=float).reshape(k)
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            i = bad[0]
            raise FloatingPointError(f"integrand not finite at sample {done + i}: w={w[i]}")
        if shift is None:
            shift = vals[0]
        d = vals - shift
        total += d.sum()
        total_sq += (d * d).sum()
        done += k
    mean_d = total / n_samples
    var = max(total_sq / n_samples - mean_d * mean_d, 0.0) * n_samples / (n_samples - 1)
    return float(shift + mean_d), float(np.sqrt(var / n_samples))
