"""K-step exit-probability upper bounds.

Every bound is Phi(h(x0), 0) / min_k Phi(0, k) for the condition family's
auxiliary function Phi (a nonnegative supermartingale along the stopped
closed loop), and Boole's inequality sums per-barrier bounds when the safe
set is an intersection. Raw values may exceed 1; `BoundReport.bound`
clips for display only.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .cbf_constraints import (
    CMartingale,
    ExpQuadratic,
    LinearZeroing,
    PolynomialSquared,
    _check_poly_form,
)
from .core_types import ContractViolation, barrier_eval, safe_set_contains

__all__ = [
    "BoundReport",
    "bound_general",
    "bound_linear",
    "bound_c_martingale",
    "bound_poly",
    "bound_exp_quad",
    "bound_boole",
    "phi_linear",
    "phi_c_martingale",
    "phi_poly",
    "phi_exp_quad",
    "phi",
    "condition_bound",
    "scenario_bound",
    "bound_grid",
    "grid_to_csv",
]


@dataclass(frozen=True)
class BoundReport:
    raw: float
    family: str
    horizon: int
    initial_state: tuple
    per_barrier_terms: tuple = field(default_factory=tuple)

    @property
    def bound(self) -> float:
        return min(self.raw, 1.0)

    def to_dict(self) -> dict:
        return {"bound": self.bound, "raw": self.raw, "family": self.family,
                "horizon": self.horizon, "initial_state": list(self.initial_state),
                "per_barrier_terms": list(self.per_barrier_terms)}


def bound_general(phi_at_x0: float, phi_floor: float) -> float:
    """Ville bound Phi(h(x0), 0) / min_k Phi(0, k)."""
    if not phi_floor > 0:
        raise ContractViolation(f"Phi floor must be positive, got {phi_floor}")
    return phi_at_x0 / phi_floor


def bound_linear(h_x0: float, B: float, alpha: float, K: int) -> float:
    """1 - alpha^K h(x0) / B."""
    if not 0 < alpha < 1:
        raise ContractViolation(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 <= h_x0 <= B:
        raise ContractViolation(f"need 0 <= h(x0) <= B, got h={h_x0}, B={B}")
    if K < 0:
        raise ContractViolation("K must be >= 0")
    return 1.0 - alpha ** K * h_x0 / B


def bound_c_martingale(h_x0: float, B: float, beta: float, K: int) -> float:
    """1 - (h(x0) - beta K) / B, floored at 0."""
    if not B > 0:
        raise ContractViolation("B must be positive")
    return max(0.0, 1.0 - (h_x0 - beta * K) / B)


def bound_poly(h_x0: float, B: float, beta: float, K: int) -> float:
    """((h(x0) - B)^2 + K beta) / B^2, i.e. Psi(s) = s^2."""
    if not B > 0:
        raise ContractViolation("B must be positive")
    return ((h_x0 - B) ** 2 + K * beta) / (B * B)


def bound_exp_quad(h_x0_scaled: float, beta: float, K: int) -> float:
    """exp(-a h(x0)) + K beta."""
    if beta < 0:
        raise ContractViolation("beta must be >= 0")
    return float(np.exp(-h_x0_scaled)) + K * beta


def bound_boole(per_barrier_bounds) -> float:
    terms = list(per_barrier_bounds)
    if not terms:
        raise ContractViolation("Boole aggregation needs at least one term")
    if any(t < 0 for t in terms):
        raise ContractViolation("bound terms must be nonnegative")
    return float(sum(terms))


# Auxiliary functions Phi(h, k) for each family

def phi_linear(h, k, K, alpha, B):
    return alpha ** (-K) * B - alpha ** (-k) * h


def phi_c_martingale(h, k, K, beta, B):
    return B - h + (K - k) * beta


def phi_poly(h, k, K, beta, B):
    return (h - B) ** 2 + (K - k) * beta


def phi_exp_quad(h, k, K, beta):
    return np.exp(-h) + (K - k) * beta


def phi(cond, bar, h, k, K):
    """Phi(h, k) for ``cond`` on the scaled barrier value ``h``."""
    B = None if bar.upper_bound is None else bar.scale * bar.upper_bound
    if isinstance(cond, LinearZeroing):
        return phi_linear(h, k, K, cond.alpha, B)
    if isinstance(cond, CMartingale):
        return phi_c_martingale(h, k, K, cond.beta, B)
    if isinstance(cond, PolynomialSquared):
        return phi_poly(h, k, K, cond.beta, B)
    if isinstance(cond, ExpQuadratic):
        return phi_exp_quad(h, k, K, cond.beta)
    raise TypeError(f"unknown condition {cond!r}")


_FAMILY = {LinearZeroing: "linear_zeroing", CMartingale: "c_martingale",
           PolynomialSquared: "polynomial_squared", ExpQuadratic: "exp_quadratic"}


def condition_bound(cond, bar, x0, K: int) -> float:
    """Raw bound for a single barrier/condition pair from state ``x0``."""
    h_s = bar.scale * barrier_eval(bar, x0)
    if isinstance(cond, ExpQuadratic):
        return bound_exp_quad(h_s, cond.beta, K)
    if bar.upper_bound is None:
        raise ContractViolation(f"{_FAMILY[type(cond)]} bound needs the barrier's upper_bound")
    B_s = bar.scale * bar.upper_bound
    if isinstance(cond, LinearZeroing):
        return bound_linear(h_s, B_s, cond.alpha, K)
    if isinstance(cond, CMartingale):
        return bound_c_martingale(h_s, B_s, cond.beta, K)
    if isinstance(cond, PolynomialSquared):
        _check_poly_form(bar)
        return bound_poly(h_s, B_s, cond.beta, K)
    raise TypeError(f"unknown condition {cond!r}")


def scenario_bound(scenario, x0=None, K: int | None = None) -> BoundReport:
    x0 = scenario.initial_state if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    K = scenario.horizon if K is None else K
    terms = tuple(condition_bound(c, scenario.barrier_for(c), x0, K) for c in scenario.conditions)
    families = sorted({_FAMILY[type(c)] for c in scenario.conditions})
    return BoundReport(bound_boole(terms), "+".join(families), K, tuple(x0.tolist()),
                       terms if len(terms) > 1 else ())


def bound_grid(scenario, axes, K: int | None = None, base_state=None) -> tuple[list, np.ndarray]:
    """Bound at every point of a 1D or 2D grid; NaN where the point is unsafe.

    ``axes`` is a list of ``(lo, hi, n_points)`` per swept state coordinate
    (the first one or two coordinates). Other coordinates come from
    ``base_state`` (default: the scenario's initial state). Returns the
    coordinate arrays and the raw bound array of shape (n1,) or (n1, n2).
    """
    if not 1 <= len(axes) <= 2:
        raise ContractViolation("grids are 1D or 2D")
    coords = [np.linspace(lo, hi, int(n)) for lo, hi, n in axes]
    base = np.array(scenario.initial_state if base_state is None else base_state, dtype=float)
    shape = tuple(len(c) for c in coords)
    out = np.full(shape, np.nan)
    for idx in np.ndindex(*shape):
        x = base.copy()
        for d, i in enumerate(idx):
            x[d] = coords[d][i]
        if safe_set_contains(scenario.safe_set, x):
            out[idx] = scenario_bound(scenario, x, K).raw
    return coords, out


def grid_to_csv(coords, values, clip: bool = True) -> str:
    """Row-major CSV with header ``x1[,x2],bound``; unsafe points are blank."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [f"x{d + 1}" for d in range(len(coords))]
    w.writerow(names + ["bound"])
    for idx in np.ndindex(*values.shape):
        v = values[idx]
        cell = "" if np.isnan(v) else repr(float(min(v, 1.0) if clip else v))
        w.writerow([repr(float(coords[d][i])) for d, i in enumerate(idx)] + [cell])
    return buf.getvalue()
