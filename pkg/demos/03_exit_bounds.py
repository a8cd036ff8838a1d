"""Exit-probability bounds for the preset scenarios and a bound heatmap.

Each condition turns a function of h into a supermartingale, and Ville's
inequality bounds the chance of leaving the safe set within K steps. The
heatmap prints the exp-quadratic pendulum bound over a coarse grid of
initial states (clipped at 1, '.' outside the safe set).
"""

import numpy as np

from stochcbf import PRESET_IDS, bound_grid, preset, scenario_bound

for pid in PRESET_IDS:
    p = preset(pid)
    rep = scenario_bound(p.scenario)
    ref = "" if p.expected_bound is None else f" (reported {p.expected_bound:.4g})"
    terms = "" if len(rep.per_barrier_terms) < 2 else \
        "  per barrier " + ", ".join(f"{t:.1e}" for t in rep.per_barrier_terms)
    print(f"{pid:22s} {rep.family:14s} K = {rep.horizon:3d}  bound {rep.bound:.4e}{ref}{terms}")

sc = preset("pendulum_expquad").scenario
coords, values = bound_grid(sc, [(-0.3, 0.3, 13), (-0.3, 0.3, 13)])
print("\nP(exit within 100 steps), theta down, theta_dot across")
print("       " + " ".join(f"{v:+5.2f}" for v in coords[1]))
for th, row in zip(coords[0], values):
    cells = ["  .  " if np.isnan(v) else f"{min(v, 1.0):5.3f}" for v in row]
    print(f"{th:+5.2f}  " + " ".join(cells))
