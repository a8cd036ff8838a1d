"""Monte-Carlo check of the bound on the filtered pendulum.

Trial i uses the PCG64 seed base_seed + i, so runs are reproducible and
independent of the worker count. The empirical exit frequency, its 95%
Clopper-Pearson interval and the theoretical bound are compared for the
linear and exp-quadratic conditions.
"""

from stochcbf import SolverOptions, preset, run_monte_carlo

for pid in ("pendulum_linear", "pendulum_expquad"):
    res = run_monte_carlo(preset(pid).scenario, SolverOptions(), n_trials=200, base_seed=7)
    lo, hi = res.clopper_pearson_95
    print(f"{pid:18s} exits {res.n_exited:3d}/{res.n_trials}  freq {res.exit_frequency:.3f}"
          f"  CI95 [{lo:.3f}, {hi:.3f}]  bound {res.theoretical_bound:.4f}"
          f"  consistent: {res.bound_satisfied}")
