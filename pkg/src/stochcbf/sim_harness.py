"""Seeded closed-loop rollouts, Monte-Carlo batches and supermartingale audits.

Randomness: each trial owns ``numpy.random.Generator(PCG64(seed))`` with
``seed = base_seed + trial_index``; noise is ``L z`` with ``L`` the lower
Cholesky factor of the noise covariance and ``z`` standard normal.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from .cbf_constraints import ExpQuadratic, LinearZeroing, CMartingale, PolynomialSquared
from .core_types import barrier_eval, drift_eval, safe_set_contains
from .exit_bounds import phi, scenario_bound
from .gaussian_moments import (
    expected_exp_neg_quadratic,
    expected_quadratic,
    expected_square_centered_quadratic,
)
from .safety_filter import FilterResult, Infeasible, SolverOptions, filter_step_multi

__all__ = [
    "TrajectoryRecord",
    "EmpiricalResult",
    "GaussianSampler",
    "sample_gaussian",
    "simulate_trajectory",
    "run_monte_carlo",
    "clopper_pearson",
    "audit_supermartingale",
    "trajectory_csv",
    "summary_json",
    "SUMMARY_SCHEMA_VERSION",
]

log = logging.getLogger(__name__)

SUMMARY_SCHEMA_VERSION = 1


@dataclass
class TrajectoryRecord:
    states: np.ndarray              # (K+1, n)
    inputs: np.ndarray              # (K, m)
    residuals: np.ndarray           # (K,), NaN once the state has left the safe set
    first_exit_step: int | None
    tainted: bool
    seed: int
    statuses: list = field(default_factory=list)


@dataclass
class EmpiricalResult:
    n_trials: int
    n_exited: int
    exit_frequency: float
    clopper_pearson_95: tuple
    theoretical_bound: float
    bound_satisfied: bool
    n_tainted: int = 0
    min_pre_exit_residual: float = np.inf
    raw_bound: float = np.nan
    per_barrier_terms: tuple = ()
    base_seed: int = 0
    scenario: str = ""

    def to_dict(self) -> dict:
        return {
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "scenario": self.scenario,
            "n_trials": self.n_trials,
            "n_exited": self.n_exited,
            "n_tainted": self.n_tainted,
            "exit_frequency": self.exit_frequency,
            "clopper_pearson_95": list(self.clopper_pearson_95),
            "theoretical_bound": self.theoretical_bound,
            "raw_bound": self.raw_bound,
            "per_barrier_terms": list(self.per_barrier_terms),
            "bound_satisfied": self.bound_satisfied,
            "min_pre_exit_residual": self.min_pre_exit_residual,
            "base_seed": self.base_seed,
        }


class GaussianSampler:
    """Draws N(0, Sigma) with a cached Cholesky factor."""

    def __init__(self, Sigma, enabled: bool = True):
        self.Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        self.L = np.linalg.cholesky(self.Sigma)
        self.enabled = enabled

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        if not self.enabled:
            return np.zeros(self.L.shape[0])
        return self.L @ rng.standard_normal(self.L.shape[0])


def sample_gaussian(Sigma, rng: np.random.Generator, enabled: bool = True) -> np.ndarray:
    return GaussianSampler(Sigma, enabled)(rng)


def _pairs(scenario):
    return [(c, scenario.barrier_for(c)) for c in scenario.conditions]


def simulate_trajectory(scenario, filter_opts: SolverOptions = SolverOptions(), seed: int = 0,
                        noise: bool = True, horizon: int | None = None) -> TrajectoryRecord:
    """Closed-loop rollout; after the first exit the nominal input is applied unfiltered.

    Raises `Infeasible` (with ``step`` and ``state`` attributes) when the filter
    fails and ``filter_opts.fallback == "error"``.
    """
    K = scenario.horizon if horizon is None else horizon
    sys = scenario.system
    rng = np.random.default_rng(seed)
    sampler = GaussianSampler(sys.noise_cov, noise)
    pairs = _pairs(scenario)
    x = np.array(scenario.initial_state, dtype=float)
    states = np.empty((K + 1, sys.state_dim))
    inputs = np.empty((K, sys.input_dim))
    residuals = np.full(K, np.nan)
    states[0] = x
    exit_step = None if safe_set_contains(scenario.safe_set, x) else 0
    tainted = False
    statuses = []
    for k in range(K):
        u_nom = scenario.nominal_policy(k, x)
        if exit_step is None:
            try:
                res: FilterResult = filter_step_multi(sys, pairs, x, u_nom, filter_opts)
            except Infeasible as err:
                if filter_opts.fallback != "max_residual" or err.best_effort is None:
                    err.step, err.state, err.seed = k, x.copy(), seed
                    raise
                log.warning("seed %d step %d: infeasible filter, applying max-residual input",
                            seed, k)
                tainted = True
                res = FilterResult(np.asarray(err.best_effort, dtype=float), err.best_residual,
                                   "infeasible_fallback", 0,
                                   float(np.linalg.norm(err.best_effort - u_nom)))
            u = res.u_star
            residuals[k] = res.residual_at_solution
            statuses.append(res.solver_status)
        else:
            u = u_nom
        inputs[k] = u
        x = drift_eval(sys, x, u) + sampler(rng)
        states[k + 1] = x
        if exit_step is None and not safe_set_contains(scenario.safe_set, x):
            exit_step = k + 1
    return TrajectoryRecord(states, inputs, residuals, exit_step, tainted, seed, statuses)


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval."""
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def _n_workers(n_trials: int) -> int:
    env = os.environ.get("STOCHCBF_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_trials))


def run_monte_carlo(scenario, filter_opts: SolverOptions = SolverOptions(), n_trials: int = 100,
                    base_seed: int = 0, horizon: int | None = None, keep_records: bool = False,
                    noise: bool = True):
    """Run ``n_trials`` seeded rollouts and compare the exit frequency with the bound.

    Returns the `EmpiricalResult`, plus the list of records when
    ``keep_records`` is set. Trials run in a process pool capped by the
    ``STOCHCBF_THREADS`` environment variable; results are reduced in
    trial order, so the output does not depend on the worker count.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    K = scenario.horizon if horizon is None else horizon
    seeds = [base_seed + i for i in range(n_trials)]
    workers = _n_workers(n_trials)
    if workers > 1:
        from joblib import Parallel, delayed
        records = Parallel(n_jobs=workers)(
            delayed(simulate_trajectory)(scenario, filter_opts, s, noise, K) for s in seeds)
    else:
        records = [simulate_trajectory(scenario, filter_opts, s, noise, K) for s in seeds]

    n_exited = sum(r.first_exit_step is not None for r in records)
    n_tainted = sum(r.tainted for r in records)
    mins = [np.nanmin(r.residuals) for r in records
            if not r.tainted and np.any(np.isfinite(r.residuals))]
    report = scenario_bound(scenario, K=K)
    ci = clopper_pearson(n_exited, n_trials)
    result = EmpiricalResult(
        n_trials=n_trials, n_exited=n_exited, exit_frequency=n_exited / n_trials,
        clopper_pearson_95=ci, theoretical_bound=report.bound,
        bound_satisfied=bool(ci[0] <= report.raw), n_tainted=n_tainted,
        min_pre_exit_residual=float(min(mins)) if mins else float("inf"),
        raw_bound=report.raw, per_barrier_terms=report.per_barrier_terms,
        base_seed=base_seed, scenario=scenario.name)
    return (result, records) if keep_records else result


def _expected_phi_next(cond, bar, sys, F, k_next, K):
    """E[Phi(a h(F + w), k+1)] in closed form."""
    A_s, b_s, c_s = bar.scaled()
    S = sys.noise_cov
    B = None if bar.upper_bound is None else bar.scale * bar.upper_bound
    if isinstance(cond, ExpQuadratic):
        return expected_exp_neg_quadratic(bar, S, F) + (K - k_next) * cond.beta
    mean_h = expected_quadratic(A_s, S, F) + b_s @ F + c_s
    if isinstance(cond, LinearZeroing):
        return cond.alpha ** (-K) * B - cond.alpha ** (-k_next) * mean_h
    if isinstance(cond, CMartingale):
        return B - mean_h + (K - k_next) * cond.beta
    if isinstance(cond, PolynomialSquared):
        # b = 0 and B = c: h - B = (F+w)'A(F+w)
        return expected_square_centered_quadratic(A_s, S, F) + (K - k_next) * cond.beta
    raise TypeError(f"unknown condition {cond!r}")


def audit_supermartingale(record: TrajectoryRecord, scenario, tol: float = 1e-8):
    """Check E[Phi(h(x+), k+1) | x_k] <= Phi(h(x_k), k) at every pre-exit step.

    Returns ``(step, barrier_index, lhs, rhs, ok)`` tuples. For the linear
    family Phi is rescaled by alpha^k so both sides stay O(1); the
    comparison is unchanged.
    """
    sys = scenario.system
    K = len(record.inputs)
    last = K if record.first_exit_step is None else min(record.first_exit_step, K)
    rows = []
    for k in range(last):
        x = record.states[k]
        F = drift_eval(sys, x, record.inputs[k])
        for cond in scenario.conditions:
            bar = scenario.barrier_for(cond)
            h_s = bar.scale * barrier_eval(bar, x)
            lhs = _expected_phi_next(cond, bar, sys, F, k + 1, K)
            rhs = phi(cond, bar, h_s, k, K)
            if isinstance(cond, LinearZeroing):
                lhs, rhs = lhs * cond.alpha ** k, rhs * cond.alpha ** k
            scale = max(1.0, abs(rhs))
            rows.append((k, cond.barrier_index, float(lhs), float(rhs),
                         bool(lhs <= rhs + tol * scale)))
    return rows


def trajectory_csv(records, max_records: int | None = None) -> str:
    """``trial,k,x1..xn,u1..um,residual,exited`` rows; inputs/residual blank at k = K."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not records:
        return ""
    n = records[0].states.shape[1]
    m = records[0].inputs.shape[1]
    w.writerow(["trial", "k"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
               + ["residual", "exited"])
    for t, rec in enumerate(records[:max_records] if max_records else records):
        K = len(rec.inputs)
        for k in range(K + 1):
            exited = int(rec.first_exit_step is not None and k >= rec.first_exit_step)
            row = [t, k] + [repr(float(v)) for v in rec.states[k]]
            if k < K:
                r = rec.residuals[k]
                row += [repr(float(v)) for v in rec.inputs[k]]
                row += ["" if np.isnan(r) else repr(float(r))]
            else:
                row += [""] * (m + 1)
            w.writerow(row + [exited])
    return buf.getvalue()


def summary_json(result: EmpiricalResult) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True)
