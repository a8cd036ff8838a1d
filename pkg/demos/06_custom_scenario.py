"""Building a scenario by hand and saving it as JSON.

A 1D integrator must stay in the interval [-1, 1], written as the barrier
h(x) = 1 - x^2. The nominal policy drives toward x = 2, outside the set.
The scenario round-trips through JSON, which is the format the command
line accepts via --scenario.
"""

import numpy as np

from stochcbf import (
    ExpQuadratic,
    QuadraticBarrier,
    SafeSet,
    Scenario,
    make_dynamics,
    make_policy,
    run_monte_carlo,
    scenario_bound,
    scenario_from_json,
    scenario_to_json,
)

dt = 0.01
system = make_dynamics("integrator", [[0.05 ** 2 * dt]], dim=1, dt=dt)
bar = QuadraticBarrier([[-1.0]], [0.0], 1.0, scale=10.0)
sc = Scenario(system, SafeSet((bar,)), (ExpQuadratic(1e-4),), 200, [0.0],
              make_policy("goal_proportional", goal=[2.0]), dt, "interval",
              "1D integrator kept in [-1, 1] while pulled toward x = 2")

text = scenario_to_json(sc)
again = scenario_from_json(text)
print(text[:300] + " ...")
print(f"\nbound {scenario_bound(again).bound:.4f}")
res = run_monte_carlo(again, n_trials=50, base_seed=0)
print(f"exits {res.n_exited}/50, bound respected: {res.bound_satisfied}")
