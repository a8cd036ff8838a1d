"""Preset scenarios: affine 1D integrator, inverted pendulum (three conditions),
2D single integrator past a hyperbola or four disk obstacles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cbf_constraints import (
    ExpQuadratic,
    LinearZeroing,
    PolynomialSquared,
    convexity_certificate,
    max_feasible_alpha,
    max_feasible_beta_poly,
)
from .core_types import (
    ContractViolation,
    QuadraticBarrier,
    SafeSet,
    Scenario,
    make_dynamics,
    make_policy,
)
from .gaussian_moments import lambda_matrix

__all__ = [
    "ScenarioPreset",
    "PRESET_IDS",
    "preset",
    "list_presets",
    "PENDULUM_A",
    "PENDULUM_SIGMA",
    "OBSTACLE_CENTERS",
    "OBSTACLE_RADIUS",
]

DT = 0.01

PENDULUM_A = -(6.0 ** 2 / np.pi ** 2) * np.array([[1.0, 3 ** -0.5], [3 ** -0.5, 1.0]])
# w_k ~ N(0, diag(0.05^2, 0.25^2) dt)
PENDULUM_SIGMA = np.diag([0.05 ** 2, 0.25 ** 2]) * DT
INTEGRATOR_SIGMA = np.diag([0.02 * DT, 0.02 * DT])

OBSTACLE_CENTERS = ((-1.5, 0.7), (0.5, 0.7), (-0.5, -0.7), (1.5, -0.7))
OBSTACLE_RADIUS = 0.4


@dataclass(frozen=True)
class ScenarioPreset:
    id: str
    scenario: Scenario
    expected_bound: float | None
    figure_ref: str


def _affine_1d():
    a, beta, sigma = 50.0, 1e-4, 1.0
    system = make_dynamics("integrator", [[sigma ** 2 * DT]], dim=1, dt=DT)
    bar = QuadraticBarrier(np.zeros((1, 1)), [1.0], 0.0, scale=a)
    sc = Scenario(system, SafeSet((bar,)), (ExpQuadratic(beta),), 150, [1.0],
                  make_policy("negative_state"), DT, "affine_1d",
                  "x+ = x + u dt + w, h(x) = x scaled by a = 50, beta = 1e-4, u_nom = -x")
    return ScenarioPreset("affine_1d", sc, None, "Fig. 1: 200 paths, heatmap of P(x, 150)")


def _pendulum_system():
    return make_dynamics("pendulum", PENDULUM_SIGMA, dt=DT)


def _pendulum(variant: str):
    system = _pendulum_system()
    base = QuadraticBarrier(PENDULUM_A, [0.0, 0.0], 1.0, upper_bound=1.0)
    if variant == "linear":
        bar = base
        cond = LinearZeroing(max_feasible_alpha(bar, PENDULUM_SIGMA))
        expected = 0.211
    elif variant == "poly":
        bar = base
        cond = PolynomialSquared(max_feasible_beta_poly(bar, PENDULUM_SIGMA))
        expected = 0.0016
    else:
        bar = base.with_scale(10.0)
        cond = ExpQuadratic(1e-5)
        expected = float(np.exp(-10.0) + 100 * 1e-5)
        if convexity_certificate(bar, PENDULUM_SIGMA) != "convex":
            raise ContractViolation("pendulum exp-quadratic filter should be convex")
    sc = Scenario(system, SafeSet((bar,)), (cond,), 100, [0.0, 0.0], make_policy("zero", dim=1),
                  DT, f"pendulum_{variant}",
                  f"inverted pendulum, h = x'Ax + 1, {type(cond).__name__} condition, u_nom = 0")
    return ScenarioPreset(f"pendulum_{variant}", sc, expected,
                          "Fig. 2: 500 trials per method, heatmap of P(x, 100)")


def _hyperbola():
    system = make_dynamics("integrator", INTEGRATOR_SIGMA, dim=2, dt=DT)
    bar = QuadraticBarrier(np.diag([5.0, -1.0]), [0.0, 0.0], 0.3, scale=20.0)
    # Lambda = Sigma^{-1}/2 + aA = diag(2600, 2480)
    lambda_matrix(INTEGRATOR_SIGMA, bar.scaled()[0])
    sc = Scenario(system, SafeSet((bar,)), (ExpQuadratic(1e-4),), 300, [-2.5, 1.0],
                  make_policy("goal_proportional", goal=[2.5, 0.5]), DT,
                  "integrator_hyperbola",
                  "2D single integrator, h = 5 x1^2 - x2^2 + 0.3 scaled by a = 20, beta = 1e-4")
    return ScenarioPreset("integrator_hyperbola", sc, 0.03, "Fig. 3: 200 trials, P(x, 300)")


def _disk_barrier(center, radius, scale):
    """h(x) = ||x - center||^2 - radius^2."""
    c = np.asarray(center, dtype=float)
    return QuadraticBarrier(np.eye(2), -2.0 * c, float(c @ c - radius ** 2), scale=scale)


def _multi():
    system = make_dynamics("integrator", INTEGRATOR_SIGMA, dim=2, dt=DT)
    bars = tuple(_disk_barrier(c, OBSTACLE_RADIUS, 20.0) for c in OBSTACLE_CENTERS)
    conds = tuple(ExpQuadratic(1e-5, barrier_index=i) for i in range(len(bars)))
    sc = Scenario(system, SafeSet(bars), conds, 300, [-2.5, 0.5],
                  make_policy("goal_proportional", goal=[2.5, -0.5]), DT, "integrator_multi",
                  "2D single integrator among four radius-0.4 disks, a_i = 20, beta_i = 1e-5")
    return ScenarioPreset("integrator_multi", sc, 0.003, "Fig. 4: 200 trials, P(x, 300)")


_BUILDERS = {
    "affine_1d": _affine_1d,
    "pendulum_linear": lambda: _pendulum("linear"),
    "pendulum_poly": lambda: _pendulum("poly"),
    "pendulum_expquad": lambda: _pendulum("expquad"),
    "integrator_hyperbola": _hyperbola,
    "integrator_multi": _multi,
}
PRESET_IDS = tuple(_BUILDERS)


def preset(id: str) -> ScenarioPreset:
    try:
        return _BUILDERS[id]()
    except KeyError:
        raise ContractViolation(f"unknown preset {id!r}; choose from {', '.join(PRESET_IDS)}") from None


def list_presets() -> list[tuple[str, str]]:
    return [(pid, preset(pid).figure_ref) for pid in PRESET_IDS]
