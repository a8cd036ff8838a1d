"""Self-checks run by ``stochcbf verify``: closed-form moments against Monte Carlo,
solver cross-checks, bound identities and supermartingale audits on rollouts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cbf_constraints import QuadraticResidual, residual_model
from .core_types import QuadraticBarrier
from .exit_bounds import bound_exp_quad, bound_general, bound_poly
from .gaussian_moments import (
    expected_exp_neg_quadratic,
    expected_square_centered_quadratic,
    mc_expectation_oracle,
)
from .safety_filter import SolverOptions, solve_convex_kkt, solve_scalar_interval, filter_step_multi
from .scenarios import PRESET_IDS, preset
from .sim_harness import audit_supermartingale, simulate_trajectory

__all__ = ["CheckResult", "VerifyTolerances", "run_checks"]


@dataclass(frozen=True)
class VerifyTolerances:
    n_sigma: float = 4.0          # Monte-Carlo acceptance band
    solver_agree: float = 1e-8
    identity_rel: float = 1e-12
    audit: float = 1e-8


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def random_barrier(rng, n, scale=None, definite=None):
    """Quadratic barrier with Lambda safely PD for the covariances used below."""
    M = rng.normal(size=(n, n))
    A = 0.5 * (M + M.T)
    if definite == "nsd":
        A = -M @ M.T / n
    b = rng.normal(size=n)
    c = float(rng.uniform(0.5, 2.0))
    return QuadraticBarrier(A, b, c, scale=scale if scale is not None else float(rng.uniform(1, 3)))


def random_cov(rng, n, level=0.05):
    M = rng.normal(size=(n, n)) * np.sqrt(level / n)
    return M @ M.T + level * 0.2 * np.eye(n)


def _moment_checks(rng, n_pairs, n_samples, tol):
    worst_exp, worst_sq = 0.0, 0.0
    for i in range(n_pairs):
        n = int(rng.integers(1, 4))
        S = random_cov(rng, n)
        bar = random_barrier(rng, n, scale=1.0)
        F = rng.normal(size=n) * 0.5
        A_s, b_s, c_s = bar.scaled()
        closed = expected_exp_neg_quadratic(bar, S, F)
        mean, se = mc_expectation_oracle(
            lambda W: np.exp(-(np.einsum("ij,jk,ik->i", F + W, A_s, F + W) + (F + W) @ b_s + c_s)),
            S, n_samples, seed=1000 + i)
        worst_exp = max(worst_exp, abs(closed - mean) / se)
        closed = expected_square_centered_quadratic(A_s, S, F)
        mean, se = mc_expectation_oracle(
            lambda W: np.einsum("ij,jk,ik->i", F + W, A_s, F + W) ** 2, S, n_samples,
            seed=2000 + i)
        worst_sq = max(worst_sq, abs(closed - mean) / se)
    return [
        CheckResult("moment: E[exp(-h)] vs Monte Carlo", worst_exp <= tol.n_sigma,
                    f"worst |diff|/se = {worst_exp:.2f} (limit {tol.n_sigma})"),
        CheckResult("moment: E[(quadratic)^2] vs Monte Carlo", worst_sq <= tol.n_sigma,
                    f"worst |diff|/se = {worst_sq:.2f} (limit {tol.n_sigma})"),
    ]


def random_concave_scalar(rng):
    """One-input concave quadratic residual that is violated at u = 0 but feasible somewhere."""
    c2 = -float(rng.uniform(0.1, 5.0))
    vertex = float(rng.normal(scale=3.0))
    peak = float(rng.uniform(0.1, 5.0))
    # r(u) = c2 (u - vertex)^2 + peak
    P = np.array([[c2]])
    p = np.array([-2.0 * c2 * vertex])
    return QuadraticResidual(P, p, c2 * vertex * vertex + peak, True)


def _solver_checks(rng, n, tol):
    worst = 0.0
    unchanged_ok = True
    for _ in range(n):
        res = random_concave_scalar(rng)
        u_nom = np.array([rng.normal(scale=3.0)])
        a = solve_scalar_interval(res, u_nom).u_star
        b = solve_convex_kkt(res, res.gradient, u_nom, hessian_fn=res.hessian).u_star
        worst = max(worst, float(abs(a - b)[0]))
        if res(u_nom) >= 0:
            unchanged_ok &= bool(np.array_equal(a, u_nom) and np.array_equal(b, u_nom))
    return [
        CheckResult("solver: scalar clamp vs KKT", worst <= tol.solver_agree,
                    f"max |u_scalar - u_kkt| = {worst:.2e} (limit {tol.solver_agree:g})"),
        CheckResult("solver: feasible u_nom returned unchanged", unchanged_ok, ""),
    ]


def _identity_checks(rng, n, tol):
    worst = 0.0
    for _ in range(n):
        B = float(rng.uniform(0.5, 3.0))
        h0 = float(rng.uniform(0.0, B))
        beta = float(rng.uniform(0.0, 1e-3))
        K = int(rng.integers(1, 500))
        direct = bound_poly(h0, B, beta, K)
        general = bound_general((h0 - B) ** 2 + K * beta, B * B)
        worst = max(worst, abs(direct - general) / abs(direct))
        direct = bound_exp_quad(h0, beta, K)
        general = bound_general(np.exp(-h0) + K * beta, 1.0)
        worst = max(worst, abs(direct - general) / abs(direct))
    return [CheckResult("bounds: general form reproduces poly and exp-quadratic",
                        worst <= tol.identity_rel, f"max rel diff = {worst:.1e}")]


def _audit_checks(n_trials, tol):
    out = []
    opts = SolverOptions(fallback="max_residual")
    for pid in PRESET_IDS:
        sc = preset(pid).scenario
        bad = checked = 0
        for seed in range(n_trials):
            rec = simulate_trajectory(sc, opts, seed)
            rows = audit_supermartingale(rec, sc, tol.audit)
            # steps where the filter gave up carry no certificate
            skip = {k for k, st in enumerate(rec.statuses) if st == "infeasible_fallback"}
            rows = [r for r in rows if r[0] not in skip]
            checked += len(rows)
            bad += sum(not r[4] for r in rows)
        out.append(CheckResult(f"audit: supermartingale step on {pid}", bad == 0,
                               f"{bad} of {checked} filtered steps violate E[Phi'] <= Phi"))
    return out


def _multi_check(rng, n):
    """Jointly filtered input satisfies every disk constraint of the multi-obstacle preset."""
    sc = preset("integrator_multi").scenario
    pairs = [(c, sc.barrier_for(c)) for c in sc.conditions]
    worst = np.inf
    for _ in range(n):
        x = rng.uniform([-2.5, -1.2], [2.5, 1.2])
        if not all(bar(x) > 0 for _, bar in pairs):
            continue
        u_nom = rng.normal(scale=5.0, size=2)
        res = filter_step_multi(sc.system, pairs, x, u_nom)
        worst = min(worst, min(residual_model(c, sc.system, b, x)(res.u_star) for c, b in pairs))
    return [CheckResult("solver: multi-constraint output feasible", worst >= -1e-8,
                        f"min residual = {worst:.2e}")]


def run_checks(fast: bool = False, tolerances: VerifyTolerances = VerifyTolerances(),
               seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    results += _moment_checks(rng, 5 if fast else 20, 200_000 if fast else 1_000_000, tolerances)
    results += _solver_checks(rng, 200 if fast else 1000, tolerances)
    results += _multi_check(rng, 50 if fast else 200)
    results += _identity_checks(rng, 1000, tolerances)
    results += _audit_checks(2 if fast else 10, tolerances)
    return results
