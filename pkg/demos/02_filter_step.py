"""One safety-filter step under each stochastic CBF condition.

The filter returns the input closest to the nominal one that satisfies the
condition. Near the edge of the pendulum's safe ellipse a zero nominal input
is unsafe in expectation, so each condition pushes the input back. The
solver that handled the step and the distance moved are printed.
"""

import numpy as np

from stochcbf import (
    CMartingale,
    ExpQuadratic,
    LinearZeroing,
    PolynomialSquared,
    condition_residual,
    filter_step,
    max_feasible_alpha,
    max_feasible_beta_poly,
    preset,
)

sc = preset("pendulum_linear").scenario
sys, bar = sc.system, sc.safe_set.barriers[0]
Sigma = sys.noise_cov
conditions = {
    "linear zeroing": (LinearZeroing(max_feasible_alpha(bar, Sigma)), bar),
    "c-martingale": (CMartingale(3e-3), bar),
    "polynomial": (PolynomialSquared(max_feasible_beta_poly(bar, Sigma)), bar),
    "exp-quadratic": (ExpQuadratic(1e-5), bar.with_scale(10.0)),
}

u_nom = np.zeros(1)
for x in ([0.0, 0.0], [0.2, 0.1], [0.2, 0.15]):
    x = np.array(x)
    print(f"state {x}, h(x) = {bar(x):.3f}")
    for name, (cond, b) in conditions.items():
        before = condition_residual(cond, sys, b, x, u_nom)
        try:
            res = filter_step(sys, cond, b, x, u_nom)
            print(f"  {name:15s} r(u_nom) = {before:+.2e}  u* = {res.u_star[0]:+8.3f}"
                  f"  r(u*) = {res.residual_at_solution:+.1e}  [{res.solver_status}]")
        except Exception as err:
            print(f"  {name:15s} r(u_nom) = {before:+.2e}  no feasible input: {err}")
