"""CBF condition residuals: ``residual(x, u) >= 0`` iff the condition holds at (x, u).

Four condition families are supported, all with closed-form conditional
expectations under additive Gaussian noise:

* `LinearZeroing`      E[h(x+)] >= alpha h(x)
* `CMartingale`        E[h(x+)] >= h(x) - beta
* `PolynomialSquared`  E[(h(x+) - B)^2] <= (h(x) - B)^2 + beta
* `ExpQuadratic`       E[exp(-a h(x+))] <= exp(-a h(x)) + beta

All use the barrier's scaled coefficients (aA, ab, ac). Besides the pointwise
residual functions, `residual_model` returns the residual as an explicit
polynomial in u (quadratic for three families, quartic for the polynomial
one) with exact gradient and Hessian, which is what the safety filter solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Mapping, Union

import numpy as np

from .core_types import ContractViolation, QuadraticBarrier, drift_eval
from .gaussian_moments import (
    exp_quad_moment,
    expected_square_centered_quadratic,
    theta,
)

__all__ = [
    "UnsupportedBarrierForm",
    "AlphaOutOfRange",
    "LinearZeroing",
    "CMartingale",
    "PolynomialSquared",
    "ExpQuadratic",
    "CbfCondition",
    "QuadraticResidual",
    "QuarticResidual",
    "residual_model",
    "condition_residual",
    "linear_condition_residual",
    "c_martingale_residual",
    "polynomial_condition_residual",
    "exp_quadratic_condition_residual",
    "affine_condition_residual",
    "max_feasible_alpha",
    "max_feasible_beta_poly",
    "printed_beta_poly",
    "convexity_certificate",
    "is_nsd",
    "condition_to_dict",
    "condition_from_dict",
]

EIG_TOL = 1e-10


class UnsupportedBarrierForm(ContractViolation):
    pass


class AlphaOutOfRange(ContractViolation):
    pass


@dataclass(frozen=True)
class LinearZeroing:
    alpha: float
    barrier_index: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise AlphaOutOfRange(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class CMartingale:
    beta: float
    barrier_index: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ContractViolation("beta must be >= 0")


@dataclass(frozen=True)
class PolynomialSquared:
    """Psi(s) = s^2 transform of h - B; B is the barrier's ``upper_bound``."""

    beta: float
    barrier_index: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ContractViolation("beta must be >= 0")


@dataclass(frozen=True)
class ExpQuadratic:
    beta: float
    barrier_index: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ContractViolation("beta must be >= 0")


CbfCondition = Union[LinearZeroing, CMartingale, PolynomialSquared, ExpQuadratic]

_VARIANTS = {"linear_zeroing": LinearZeroing, "c_martingale": CMartingale,
             "polynomial_squared": PolynomialSquared, "exp_quadratic": ExpQuadratic}
_NAMES = {v: k for k, v in _VARIANTS.items()}


def condition_to_dict(cond: CbfCondition) -> dict:
    d = {"variant": _NAMES[type(cond)], "barrier_index": cond.barrier_index}
    d.update({"alpha": cond.alpha} if isinstance(cond, LinearZeroing) else {"beta": cond.beta})
    return d


def condition_from_dict(d: Mapping) -> CbfCondition:
    try:
        cls = _VARIANTS[d["variant"]]
    except KeyError:
        raise ContractViolation(f"unknown condition variant {d.get('variant')!r}") from None
    param = d["alpha"] if cls is LinearZeroing else d["beta"]
    return cls(param, int(d.get("barrier_index", 0)))


def is_nsd(M: np.ndarray, tol: float = EIG_TOL) -> bool:
    M = np.atleast_2d(M)
    return bool(np.max(np.linalg.eigvalsh(0.5 * (M + M.T))) <= tol)


def _log_exp_plus_beta(neg_h: float, beta: float) -> float:
    """log(exp(neg_h) + beta) without overflow/underflow."""
    if beta == 0:
        return float(neg_h)
    return float(np.logaddexp(neg_h, np.log(beta)))


def _scaled_h(bar: QuadraticBarrier, x) -> float:
    A_s, b_s, c_s = bar.scaled()
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(x @ A_s @ x + b_s @ x + c_s)


def _check_poly_form(bar: QuadraticBarrier):
    if np.any(bar.b) or bar.upper_bound is None or bar.upper_bound != bar.c:
        raise UnsupportedBarrierForm(
            "polynomial condition needs h(x) = x'Ax + c with upper_bound B = c")


# -- residuals as polynomials in u ---------------------------------------------

@dataclass(frozen=True, eq=False)
class QuadraticResidual:
    """r(u) = u'Pu + p'u + p0."""

    P: np.ndarray
    p: np.ndarray
    p0: float
    certified_concave: bool = False

    def __call__(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return float(u @ self.P @ u + self.p @ u + self.p0)

    def gradient(self, u) -> np.ndarray:
        return 2.0 * self.P @ np.atleast_1d(np.asarray(u, dtype=float)) + self.p

    def hessian(self, u=None) -> np.ndarray:
        return 2.0 * self.P

    @property
    def dim(self) -> int:
        return self.p.shape[0]


def _from_F_quadratic(Q, l, r, f, G, certified) -> QuadraticResidual:
    """Pull q(F) = F'QF + l'F + r back through F = f + Gu."""
    P = G.T @ Q @ G
    p = G.T @ (2.0 * Q @ f + l)
    p0 = float(f @ Q @ f + l @ f + r)
    return QuadraticResidual(0.5 * (P + P.T), p, p0, certified)


@dataclass(frozen=True, eq=False)
class QuarticResidual:
    """r(u) = const - E[((F+w)'A(F+w))^2] with F = f + Gu."""

    A: np.ndarray
    Sigma: np.ndarray
    f: np.ndarray
    G: np.ndarray
    const: float
    certified_concave: bool = False

    def __post_init__(self):
        A, S = self.A, self.Sigma
        AS = A @ S
        tr = float(np.trace(AS))
        object.__setattr__(self, "_ASA", A @ S @ A)
        object.__setattr__(self, "_tr", tr)
        object.__setattr__(self, "_c0", 2.0 * float(np.trace(AS @ AS)) + tr * tr)
        # Hessian in F minus its 8 AF AF' + 4 q A part
        object.__setattr__(self, "_HF0", 8.0 * self._ASA + 4.0 * tr * A)

    def _F(self, u):
        return self.f + self.G @ np.atleast_1d(np.asarray(u, dtype=float))

    def __call__(self, u) -> float:
        F = self._F(u)
        AF = self.A @ F
        q = F @ AF
        return float(self.const - (q * q + 4.0 * F @ self._ASA @ F + 2.0 * q * self._tr + self._c0))

    def gradient(self, u) -> np.ndarray:
        F = self._F(u)
        AF = self.A @ F
        q = F @ AF
        dF = 4.0 * (q + self._tr) * AF + 8.0 * self._ASA @ F
        return -self.G.T @ dF

    def hessian(self, u) -> np.ndarray:
        F = self._F(u)
        AF = self.A @ F
        q = F @ AF
        HF = 8.0 * np.outer(AF, AF) + 4.0 * q * self.A + self._HF0
        return -self.G.T @ HF @ self.G

    @property
    def dim(self) -> int:
        return self.G.shape[1]


@lru_cache(maxsize=64)
def _exp_quad_coeffs(A_bytes, b_bytes, c_s, S_bytes, n):
    """State-independent part of the exp-quadratic residual as a quadratic in F."""
    A_s = np.frombuffer(A_bytes).reshape(n, n)
    b_s = np.frombuffer(b_bytes)
    S = np.frombuffer(S_bytes).reshape(n, n)
    mom = exp_quad_moment(S, A_s)
    Linv_A = mom.solve(A_s)
    Linv_b = mom.solve(b_s)
    N = A_s - A_s @ Linv_A
    N = 0.5 * (N + N.T)
    l = b_s - A_s @ Linv_b
    r0 = c_s - 0.25 * b_s @ Linv_b + mom.log_det_term
    return N, l, float(r0), is_nsd(N)


def residual_model(cond: CbfCondition, sys, bar: QuadraticBarrier, x):
    """The condition residual at state ``x`` as an explicit function of u."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f = sys.f(x)
    G = sys.g(x)
    S = sys.noise_cov
    A_s, b_s, c_s = bar.scaled()
    h_x = _scaled_h(bar, x)
    if isinstance(cond, LinearZeroing):
        r = c_s + np.trace(A_s @ S) - cond.alpha * h_x
        return _from_F_quadratic(A_s, b_s, r, f, G, is_nsd(A_s))
    if isinstance(cond, CMartingale):
        r = c_s + np.trace(A_s @ S) - h_x + cond.beta
        return _from_F_quadratic(A_s, b_s, r, f, G, is_nsd(A_s))
    if isinstance(cond, PolynomialSquared):
        _check_poly_form(bar)
        B_s = bar.scale * bar.upper_bound
        const = (h_x - B_s) ** 2 + cond.beta
        # h concave and s^2 convex: concave in u
        return QuarticResidual(A_s, S, f, G, float(const), is_nsd(A_s))
    if isinstance(cond, ExpQuadratic):
        N, l, r0, certified = _exp_quad_coeffs(A_s.tobytes(), b_s.tobytes(), float(c_s),
                                               np.asarray(S, dtype=float).tobytes(), A_s.shape[0])
        r = r0 + _log_exp_plus_beta(-h_x, cond.beta)
        return _from_F_quadratic(N, l, r, f, G, certified)
    raise TypeError(f"unknown condition {cond!r}")


# -- pointwise residuals --------------------------------------------------------

def linear_condition_residual(cond: LinearZeroing, sys, bar, x, u) -> float:
    """h(F) + Tr(A Sigma) - alpha h(x); exact since E[h(F+w)] = h(F) + Tr(A Sigma)."""
    F = drift_eval(sys, x, u)
    A_s = bar.scaled()[0]
    return _scaled_h(bar, F) + float(np.trace(A_s @ sys.noise_cov)) - cond.alpha * _scaled_h(bar, x)


def c_martingale_residual(cond: CMartingale, sys, bar, x, u) -> float:
    """E[h(x+)] - h(x) + beta."""
    F = drift_eval(sys, x, u)
    A_s = bar.scaled()[0]
    return _scaled_h(bar, F) + float(np.trace(A_s @ sys.noise_cov)) - _scaled_h(bar, x) + cond.beta


def polynomial_condition_residual(cond: PolynomialSquared, sys, bar, x, u) -> float:
    _check_poly_form(bar)
    F = drift_eval(sys, x, u)
    A_s = bar.scaled()[0]
    B_s = bar.scale * bar.upper_bound
    return ((_scaled_h(bar, x) - B_s) ** 2 + cond.beta
            - expected_square_centered_quadratic(A_s, sys.noise_cov, F))


def exp_quadratic_condition_residual(cond: ExpQuadratic, sys, bar, x, u) -> float:
    """a h(F) - theta + log(exp(-a h(x)) + beta) + M."""
    F = drift_eval(sys, x, u)
    A_s, b_s, _ = bar.scaled()
    mom = exp_quad_moment(sys.noise_cov, A_s)
    return (_scaled_h(bar, F) - theta(F, A_s, b_s, mom)
            + _log_exp_plus_beta(-_scaled_h(bar, x), cond.beta) + mom.log_det_term)


def affine_condition_residual(cond: ExpQuadratic, sys, bar, x, u) -> float:
    """Exp-quadratic residual for affine h: a h(F) + log(exp(-a h(x)) + beta) - a^2 b'Sigma b / 2."""
    if not bar.is_affine:
        raise UnsupportedBarrierForm("affine residual needs A = 0")
    F = drift_eval(sys, x, u)
    b_s = bar.scale * bar.b
    return (_scaled_h(bar, F) + _log_exp_plus_beta(-_scaled_h(bar, x), cond.beta)
            - 0.5 * float(b_s @ sys.noise_cov @ b_s))


_POINTWISE = {
    LinearZeroing: linear_condition_residual,
    CMartingale: c_martingale_residual,
    PolynomialSquared: polynomial_condition_residual,
    ExpQuadratic: exp_quadratic_condition_residual,
}


def condition_residual(cond: CbfCondition, sys, bar, x, u) -> float:
    return _POINTWISE[type(cond)](cond, sys, bar, x, u)


# -- parameter helpers ---------------------------------------------------------------

def max_feasible_alpha(bar: QuadraticBarrier, Sigma) -> float:
    """1 + Tr(aA Sigma): the largest alpha feasible where h = B and F = 0."""
    tr = float(np.trace(bar.scaled()[0] @ np.atleast_2d(Sigma)))
    if not -1.0 < tr < 0.0:
        raise AlphaOutOfRange(f"Tr(A Sigma) = {tr} gives alpha outside (0, 1)")
    return 1.0 + tr


def _poly_traces(bar, Sigma):
    if np.any(bar.b):
        raise UnsupportedBarrierForm("needs h(x) = x'Ax + c")
    AS = bar.scaled()[0] @ np.atleast_2d(Sigma)
    return float(np.trace(AS @ AS)), float(np.trace(AS))


def max_feasible_beta_poly(bar: QuadraticBarrier, Sigma) -> float:
    """2 Tr((A Sigma)^2) + Tr(A Sigma)^2.

    Smallest beta for which the squared condition is satisfiable at x = 0 with
    F = 0: there the residual is beta minus exactly this quantity.
    """
    sq, tr = _poly_traces(bar, Sigma)
    return 2.0 * sq + tr * tr


def printed_beta_poly(bar: QuadraticBarrier, Sigma) -> float:
    """Tr((A Sigma)^2) + Tr(A Sigma)^2; leaves residual -Tr((A Sigma)^2) at x = F = 0."""
    sq, tr = _poly_traces(bar, Sigma)
    return sq + tr * tr


def convexity_certificate(bar: QuadraticBarrier, Sigma) -> Literal["convex", "not_certified"]:
    """``convex`` when N = aA - aA Lambda^{-1} aA is negative semidefinite."""
    A_s = bar.scaled()[0]
    mom = exp_quad_moment(Sigma, A_s)
    N = A_s - A_s @ mom.solve(A_s)
    return "convex" if is_nsd(N) else "not_certified"
