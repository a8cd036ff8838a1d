"""Minimal-deviation safety filter: argmin ||u - u_nom||^2 s.t. residual(u) >= 0.

Four solvers, chosen from the structure of the residual:

* scalar input and quadratic residual -> exact root-interval clamp
* residual certified concave in u      -> single-constraint KKT, safeguarded Newton on the multiplier
* single quadratic residual, not concave -> global solve on the multiplier
  (secular equation of the trust-region type problem)
* several residuals active at once      -> deterministic multistart of local SLSQP solves
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .cbf_constraints import QuadraticResidual, residual_model

__all__ = [
    "Infeasible",
    "NoConvergence",
    "SolverOptions",
    "FilterResult",
    "solve_scalar_interval",
    "solve_convex_kkt",
    "solve_nonconvex_multistart",
    "solve_quadratic_global",
    "filter_step",
    "filter_step_multi",
]

Status = Literal["analytic", "kkt_converged", "multistart_best", "infeasible_fallback"]


class Infeasible(RuntimeError):
    """No input satisfies the condition(s).

    ``best_effort`` holds the input with the largest worst-case residual
    found while searching, used by the ``max_residual`` fallback.
    """

    def __init__(self, msg: str, best_effort: np.ndarray | None = None,
                 best_residual: float = -np.inf):
        super().__init__(msg)
        self.best_effort = best_effort
        self.best_residual = best_residual


class NoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10            # KKT: |residual| at an active solution
    feas_tol: float = 1e-8        # accepted constraint violation
    max_iter: int = 200           # multiplier iterations
    multistart_extra: int = 2     # low-discrepancy starts on top of 1 + 2m
    radius: float | None = None   # default 5 (1 + ||u_nom||)
    local_max_iter: int = 100
    fallback: Literal["error", "max_residual"] = "error"


@dataclass(frozen=True)
class FilterResult:
    u_star: np.ndarray
    residual_at_solution: float
    solver_status: Status
    iterations: int
    distance: float


def _result(u, r, status, it, u_nom) -> FilterResult:
    u = np.array(u, dtype=float)
    return FilterResult(u, float(r), status, int(it), float(np.linalg.norm(u - u_nom)))


def _unchanged(u_nom, r) -> FilterResult:
    return FilterResult(np.array(u_nom, dtype=float), float(r), "analytic", 0, 0.0)


# -- m = 1, quadratic ------------------------------------------------------------------

def _roots(c2, c1, c0):
    disc = c1 * c1 - 4.0 * c2 * c0
    if disc < 0:
        return None
    q = -0.5 * (c1 + np.copysign(np.sqrt(disc), c1))
    if q == 0.0:
        return (0.0, 0.0)
    r1, r2 = q / c2, c0 / q
    return (min(r1, r2), max(r1, r2))


def solve_scalar_interval(residual, u_nom, feas_tol: float = 1e-8) -> FilterResult:
    """Clamp ``u_nom`` onto {u : c2 u^2 + c1 u + c0 >= 0}.

    ``residual`` is a one-input `QuadraticResidual` or a coefficient triple
    ``(c2, c1, c0)``.
    """
    if isinstance(residual, QuadraticResidual):
        if residual.dim != 1:
            raise ValueError("scalar solver needs a one-dimensional input")
        c2, c1, c0 = float(residual.P[0, 0]), float(residual.p[0]), float(residual.p0)
    else:
        c2, c1, c0 = map(float, residual)
    u0 = float(np.atleast_1d(u_nom)[0])

    def r(u):
        return c2 * u * u + c1 * u + c0

    if r(u0) >= 0:
        return _unchanged([u0], r(u0))
    if c2 == 0.0:
        if c1 == 0.0:
            raise Infeasible(f"constant residual {c0} < 0", np.array([u0]), c0)
        u = -c0 / c1
    else:
        roots = _roots(c2, c1, c0)
        if c2 < 0:
            vertex = -c1 / (2.0 * c2)
            if roots is None:
                if r(vertex) >= -feas_tol:
                    return _result([vertex], r(vertex), "analytic", 0, [u0])
                raise Infeasible(f"residual maximum {r(vertex):.3e} < 0",
                                 np.array([vertex]), r(vertex))
            lo, hi = roots
            u = min(max(u0, lo), hi)
        else:
            # u0 sits strictly between the two roots
            lo, hi = roots
            u = lo if u0 - lo <= hi - u0 else hi
    return _result([u], r(u), "analytic", 0, [u0])


# -- certified concave residual ---------------------------------------------------------------

def _argmin_penalized(residual, gradient, hessian, u_nom, mu, u_start, max_newton=50):
    """argmin_u ||u - u_nom||^2 - mu r(u) for concave r."""
    if isinstance(residual, QuadraticResidual):
        m = residual.dim
        return np.linalg.solve(np.eye(m) - mu * residual.P, u_nom + 0.5 * mu * residual.p)
    u = np.array(u_start, dtype=float)
    m = u.shape[0]
    if hessian is None:
        res = minimize(lambda v: np.sum((v - u_nom) ** 2) - mu * residual(v), u,
                       jac=lambda v: 2.0 * (v - u_nom) - mu * gradient(v), method="BFGS",
                       options={"gtol": 1e-13})
        return res.x
    for _ in range(max_newton):
        g = 2.0 * (u - u_nom) - mu * gradient(u)
        H = 2.0 * np.eye(m) - mu * hessian(u)
        step = np.linalg.solve(H, g)
        u = u - step
        if np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(u)):
            break
    return u


def _maximize_concave(residual, gradient, hessian, u0, max_iter=100):
    """Damped Newton ascent; None if the maximum is not reached (unbounded or flat)."""
    u = np.array(u0, dtype=float)
    r = residual(u)
    for _ in range(max_iter):
        g = gradient(u)
        H = hessian(u)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if g @ step < 0:
            return None
        if g @ step == 0:
            return u
        t = 1.0
        while t > 1e-12:
            cand = u + t * step
            r_c = residual(cand)
            if r_c >= r:
                break
            t *= 0.5
        else:
            return u
        u, r = cand, r_c
        if np.linalg.norm(t * step) <= 1e-14 * (1.0 + np.linalg.norm(u)):
            return u
    return u


def solve_convex_kkt(residual_fn: Callable, gradient_fn: Callable, u_nom, tol: float = 1e-10,
                     hessian_fn: Callable | None = None, max_iter: int = 200,
                     feas_tol: float = 1e-8) -> FilterResult:
    """Single-constraint KKT solve for a residual concave in u.

    Finds mu >= 0 with u = u_nom + (mu/2) grad r(u) and r(u) = 0. The map
    mu -> r(u(mu)) is nondecreasing; its root is found by Newton steps in mu
    safeguarded by a bracket, and the feasible end of the bracket is returned.
    """
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    r_nom = residual_fn(u_nom)
    if r_nom >= 0:
        return _unchanged(u_nom, r_nom)

    if hessian_fn is None and hasattr(residual_fn, "hessian"):
        hessian_fn = residual_fn.hessian
    if isinstance(residual_fn, QuadraticResidual):
        _check_quadratic_sup(residual_fn, feas_tol)
    elif hessian_fn is not None:
        u_max = _maximize_concave(residual_fn, gradient_fn, hessian_fn, u_nom)
        if u_max is not None and residual_fn(u_max) < -feas_tol:
            r_max = residual_fn(u_max)
            raise Infeasible(f"residual maximum {r_max:.3e} < 0", u_max, r_max)

    m = u_nom.shape[0]

    def solve(mu, start):
        u = _argmin_penalized(residual_fn, gradient_fn, hessian_fn, u_nom, mu, start)
        g = gradient_fn(u)
        H = hessian_fn(u) if hessian_fn is not None else np.zeros((m, m))
        # d r(u(mu)) / d mu = g' (2I - mu H)^{-1} g
        return u, residual_fn(u), float(g @ np.linalg.solve(2.0 * np.eye(m) - mu * H, g))

    out = _newton_multiplier(solve, u_nom, r_nom, solve(0.0, u_nom)[2], np.inf, tol, feas_tol,
                             max_iter)
    return _result(out[0], out[1], "kkt_converged", out[2], u_nom)


def _newton_multiplier(eval_at, u, r, d, cap, tol, feas_tol, max_iter):
    """Root of the nondecreasing map mu -> r(u(mu)) on [0, cap), starting at mu = 0 with r < 0.

    ``eval_at(mu, u_prev)`` returns ``(u, r, dr/dmu)``. Newton steps are kept
    inside the bracket, falling back to bisection. Returns ``(u, r, iters)``
    at the feasible end, or None if r is still negative as mu reaches a finite cap.
    """
    mu, lo = 0.0, 0.0
    hi, u_hi, r_hi = cap, None, np.inf
    eps = 4 * np.finfo(float).eps
    for it in range(1, max_iter + 1):
        # from a nearly feasible point overshoot so the next iterate lands on the feasible side
        cand = mu - (2.0 if -r <= tol else 1.0) * r / d if d > 0 else np.nan
        if np.isfinite(hi):
            if not lo < cand < hi:
                cand = 0.5 * (lo + hi)
        elif not cand > lo:
            cand = max(4.0 * lo, 1.0)
        u, r, d = eval_at(cand, u)
        mu = cand
        if r >= 0:
            hi, u_hi, r_hi = mu, u, r
            if r <= tol or hi - lo <= eps * hi:
                return u_hi, r_hi, it
        else:
            lo = mu
            if u_hi is None and np.isfinite(cap) and cap - lo <= eps * cap:
                return None
            if lo > 1e30:
                if r >= -feas_tol:
                    return u, r, it
                raise Infeasible(f"residual stays negative (max seen {r:.3e})", u, r)
    if u_hi is not None:
        return u_hi, r_hi, max_iter
    raise NoConvergence(f"multiplier search did not converge (r={r:.3e})")


def _check_quadratic_sup(res: QuadraticResidual, feas_tol):
    """Raise `Infeasible` when a concave quadratic residual has a negative maximum."""
    P = res.P
    w, V = np.linalg.eigh(P)
    if np.all(w < 0):
        u_max = np.linalg.solve(P, -0.5 * res.p)
        r_max = res(u_max)
        if r_max < -feas_tol:
            raise Infeasible(f"residual maximum {r_max:.3e} < 0", u_max, r_max)


def solve_quadratic_global(residual: QuadraticResidual, u_nom, tol: float = 1e-10,
                           max_iter: int = 200, feas_tol: float = 1e-8) -> FilterResult:
    """Global minimizer of ||u - u_nom||^2 s.t. u'Pu + p'u + p0 >= 0, any symmetric P.

    In the eigenbasis of P the stationary points are
    y_i(mu) = (y_nom_i + mu q_i / 2) / (1 - mu d_i); the global one has
    I - mu P positive semidefinite, i.e. mu in [0, 1/d_max), where
    r(u(mu)) is increasing. If r stays negative up to 1/d_max (the "hard
    case"), the solution moves along the top eigenvector.
    """
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    r_nom = residual(u_nom)
    if r_nom >= 0:
        return _unchanged(u_nom, r_nom)
    d, V = np.linalg.eigh(residual.P)
    y_nom = V.T @ u_nom
    q = V.T @ residual.p
    d_max = d[-1]
    mu_cap = 1.0 / d_max if d_max > 0 else np.inf

    p0 = residual.p0

    def eval_at(mu, _prev=None):
        den = 1.0 - mu * d
        y = (y_nom + 0.5 * mu * q) / den
        gy = 2.0 * d * y + q
        # d y_i / d mu = gy_i / (2 den_i)
        return V @ y, float(y @ (d * y) + q @ y + p0), float(gy @ (gy / (2.0 * den)))

    if not np.isfinite(mu_cap):
        _check_quadratic_sup(residual, feas_tol)
    _, _, d0 = eval_at(0.0)
    out = _newton_multiplier(eval_at, u_nom, r_nom, d0, mu_cap, tol, feas_tol, max_iter)
    if out is None:
        return _hard_case(residual, u_nom, d, V, y_nom, q, mu_cap, max_iter)
    u, _, it = out
    # report the residual evaluated in the original coordinates
    return _result(u, residual(u), "kkt_converged", it, u_nom)


def _hard_case(residual, u_nom, d, V, y_nom, q, mu_cap, it):
    top = np.isclose(d, d[-1], rtol=1e-12, atol=0.0)
    y = np.where(top, 0.0, (y_nom + 0.5 * mu_cap * q) / np.where(top, 1.0, 1.0 - mu_cap * d))
    # move along the first top eigenvector until the residual reaches zero
    i = int(np.flatnonzero(top)[0])
    base = V @ y
    r0 = residual(base)
    c2, c1 = d[i], q[i]
    roots = _roots(c2, c1, r0)
    if roots is None:
        raise Infeasible("hard case without a boundary point", base, r0)
    t = min(roots, key=lambda t: (abs(t - y_nom[i]), t))
    u = base + t * V[:, i]
    u = _repair(u, [residual], 0.0)
    return _result(u, residual(u), "kkt_converged", it, u_nom)


# -- nonconvex, possibly several constraints -------------------------------------------------------------

def _start_points(u_nom, radius, extra):
    m = u_nom.shape[0]
    starts = [u_nom.copy()]
    for j in range(m):
        for sgn in (1.0, -1.0):
            e = np.zeros(m)
            e[j] = sgn * radius
            starts.append(u_nom + e)
    if extra > 0:
        pts = qmc.Halton(d=m, scramble=False).random(extra + 1)[1:]
        starts.extend(u_nom + radius * (2.0 * pts[i] - 1.0) for i in range(extra))
    return starts


def _repair(u, models, feas_tol, steps=30):
    """Gradient steps on violated constraints until all are within ``feas_tol``."""
    for _ in range(steps):
        vals = np.array([r(u) for r in models])
        i = int(np.argmin(vals))
        if vals[i] >= 0:
            return u
        g = models[i].gradient(u)
        gg = g @ g
        if gg == 0:
            return u
        u = u + (-vals[i] / gg) * (1.0 + 1e-9) * g + 1e-15 * g / np.sqrt(gg)
    return u


def solve_nonconvex_multistart(residual_fns: Sequence | Callable, gradient_fns=None, u_nom=None,
                               opts: SolverOptions = SolverOptions()) -> FilterResult:
    """Best local solution over a fixed pattern of starting points.

    ``residual_fns`` is one residual or a sequence; each must expose
    ``__call__`` and, unless ``gradient_fns`` is given, ``gradient``.
    """
    if callable(residual_fns) and not isinstance(residual_fns, (list, tuple)):
        residual_fns = [residual_fns]
        if gradient_fns is not None and not isinstance(gradient_fns, (list, tuple)):
            gradient_fns = [gradient_fns]
    if gradient_fns is None:
        gradient_fns = [r.gradient for r in residual_fns]
    models = [_Wrapped(r, g) for r, g in zip(residual_fns, gradient_fns)]
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))

    def worst(u):
        return min(r(u) for r in models)

    r_nom = worst(u_nom)
    if r_nom >= 0:
        return _unchanged(u_nom, r_nom)

    radius = opts.radius if opts.radius is not None else 5.0 * (1.0 + np.linalg.norm(u_nom))
    cons = [{"type": "ineq", "fun": r.__call__, "jac": r.gradient} for r in models]
    best = None
    best_effort, best_effort_r = u_nom, r_nom
    total_it = 0
    for start in _start_points(u_nom, radius, opts.multistart_extra):
        res = minimize(lambda v: float(np.sum((v - u_nom) ** 2)), start,
                       jac=lambda v: 2.0 * (v - u_nom), constraints=cons, method="SLSQP",
                       options={"ftol": 1e-14, "maxiter": opts.local_max_iter})
        total_it += int(res.nit)
        u = _repair(np.asarray(res.x, dtype=float), models, opts.feas_tol)
        if not np.all(np.isfinite(u)):
            continue
        r_u = worst(u)
        if r_u > best_effort_r:
            best_effort, best_effort_r = u, r_u
        if r_u < -opts.feas_tol:
            continue
        d = float(np.linalg.norm(u - u_nom))
        if best is None or d < best[0]:
            best = (d, u, r_u)
    if best is None:
        raise Infeasible(f"no start reached a feasible point (best {best_effort_r:.3e})",
                         best_effort, best_effort_r)
    return _result(best[1], best[2], "multistart_best", total_it, u_nom)


class _Wrapped:
    def __init__(self, fn, grad):
        self.fn, self.gradient = fn, grad

    def __call__(self, u):
        return float(self.fn(u))


# -- dispatch ---------------------------------------------------------------------------------------

def _solve_model(model, u_nom, opts: SolverOptions) -> FilterResult:
    r_nom = model(u_nom)
    if r_nom >= 0:
        return _unchanged(u_nom, r_nom)
    if isinstance(model, QuadraticResidual) and model.dim == 1:
        return solve_scalar_interval(model, u_nom, opts.feas_tol)
    if model.certified_concave:
        return solve_convex_kkt(model, model.gradient, u_nom, opts.tol, model.hessian,
                                opts.max_iter, opts.feas_tol)
    if isinstance(model, QuadraticResidual):
        return solve_quadratic_global(model, u_nom, opts.tol, opts.max_iter, opts.feas_tol)
    return solve_nonconvex_multistart([model], None, u_nom, opts)


def filter_step(sys, cond, bar, x, u_nom, opts: SolverOptions = SolverOptions()) -> FilterResult:
    """Filter ``u_nom`` through one CBF condition at state ``x``."""
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    return _solve_model(residual_model(cond, sys, bar, x), u_nom, opts)


def filter_step_multi(sys, pairs, x, u_nom, opts: SolverOptions = SolverOptions()) -> FilterResult:
    """Filter ``u_nom`` through several (condition, barrier) pairs jointly.

    The joint problem goes to the multistart solver; if it finds nothing,
    the constraints are applied one after another (each solve starting
    from the previous output) and the result is accepted only if it
    satisfies all of them.
    """
    u_nom = np.atleast_1d(np.asarray(u_nom, dtype=float))
    models = [residual_model(cond, sys, bar, x) for cond, bar in pairs]
    if len(models) == 1:
        return _solve_model(models[0], u_nom, opts)
    worst_nom = min(r(u_nom) for r in models)
    if worst_nom >= 0:
        return _unchanged(u_nom, worst_nom)
    violated = [r for r in models if r(u_nom) < 0]
    try:
        if len(violated) == 1:
            # only one constraint binds at u_nom; solve it alone, keep it if the rest hold
            res = _solve_model(violated[0], u_nom, opts)
            r_all = min(r(res.u_star) for r in models)
            if r_all >= -opts.feas_tol:
                return replace(res, residual_at_solution=r_all)
        res = solve_nonconvex_multistart(models, None, u_nom, opts)
        return res
    except Infeasible as joint_err:
        u = u_nom
        it = 0
        try:
            for r in models:
                step = _solve_model(r, u, opts)
                u, it = step.u_star, it + step.iterations
        except Infeasible:
            raise joint_err from None
        r_all = min(r(u) for r in models)
        if r_all < -opts.feas_tol:
            raise joint_err from None
        return _result(u, r_all, "multistart_best", it, u_nom)
