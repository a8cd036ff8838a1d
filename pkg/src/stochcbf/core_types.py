"""System, barrier, safe-set and scenario types shared across the package.

Dynamics and nominal policies are plain callables. To make a scenario
serializable, build them through the named registries (`make_dynamics`,
`make_policy`); each object remembers its registry name and parameters so
it can be written to JSON and rebuilt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

__all__ = [
    "ContractViolation",
    "ControlAffineSystem",
    "QuadraticBarrier",
    "SafeSet",
    "NominalPolicy",
    "Scenario",
    "drift_eval",
    "barrier_eval",
    "scaled_barrier_eval",
    "safe_set_contains",
    "register_dynamics",
    "register_policy",
    "make_dynamics",
    "make_policy",
    "scenario_to_dict",
    "scenario_from_dict",
    "scenario_to_json",
    "scenario_from_json",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1


class ContractViolation(ValueError):
    """Raised when an argument breaks a documented precondition."""


def _is_symmetric(mat: np.ndarray) -> bool:
    scale = 1.0 + (np.max(np.abs(mat)) if mat.size else 0.0)
    return bool(np.max(np.abs(mat - mat.T), initial=0.0) <= 1e-12 * scale)


def _frozen(arr: Any, ndim: int, name: str) -> np.ndarray:
    out = np.array(arr, dtype=float)
    if out.ndim != ndim:
        raise ContractViolation(f"{name} must be {ndim}-dimensional, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ContractViolation(f"{name} has non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """x+ = f(x) + g(x) u + w, w ~ N(0, noise_cov)."""

    state_dim: int
    input_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_map: Callable[[np.ndarray], np.ndarray]
    noise_cov: np.ndarray
    kind: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.state_dim < 1 or self.input_dim < 1:
            raise ContractViolation("state_dim and input_dim must be positive")
        cov = _frozen(self.noise_cov, 2, "noise_cov")
        if cov.shape != (self.state_dim, self.state_dim):
            raise ContractViolation(f"noise_cov must be {self.state_dim}x{self.state_dim}")
        if not _is_symmetric(cov):
            raise ContractViolation("noise_cov is not symmetric")
        if np.min(np.linalg.eigvalsh(cov)) <= 0.0:
            raise ContractViolation("noise_cov is not positive definite")
        object.__setattr__(self, "noise_cov", cov)

    def f(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.drift(x), dtype=float).reshape(self.state_dim)

    def g(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.input_map(x), dtype=float).reshape(self.state_dim, self.input_dim)


@dataclass(frozen=True, eq=False)
class QuadraticBarrier:
    """h(x) = x'Ax + b'x + c, optionally scaled by ``scale`` and bounded above."""

    A: np.ndarray
    b: np.ndarray
    c: float
    scale: float = 1.0
    upper_bound: float | None = None

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        b = _frozen(self.b, 1, "b")
        n = b.shape[0]
        if A.shape != (n, n):
            raise ContractViolation(f"A must be {n}x{n} to match b, got {A.shape}")
        if not _is_symmetric(A):
            raise ContractViolation("A is not symmetric")
        if not self.scale >= 1.0:
            raise ContractViolation(f"scale must be >= 1, got {self.scale}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))
        object.__setattr__(self, "scale", float(self.scale))
        if self.upper_bound is not None:
            B = float(self.upper_bound)
            if B < self.sup_value() - 1e-12 * (1.0 + abs(B)):
                raise ContractViolation(
                    f"upper_bound {B} is below sup h = {self.sup_value()}")
            object.__setattr__(self, "upper_bound", B)

    @property
    def dim(self) -> int:
        return self.b.shape[0]

    @property
    def is_affine(self) -> bool:
        return not np.any(self.A)

    def sup_value(self) -> float:
        """Supremum of h over R^n (``inf`` when h is unbounded above)."""
        A, b = self.A, self.b
        if not np.any(A) and not np.any(b):
            return self.c
        if np.max(np.linalg.eigvalsh(A)) > 1e-12 * (1.0 + np.max(np.abs(A))):
            return np.inf
        # b must lie in range(A), otherwise h is unbounded along the null space
        Ap = np.linalg.pinv(A)
        if np.linalg.norm(A @ (Ap @ b) - b) > 1e-9 * (1.0 + np.linalg.norm(b)):
            return np.inf
        return self.c - 0.25 * b @ Ap @ b

    def scaled(self) -> tuple[np.ndarray, np.ndarray, float]:
        """Coefficients (aA, ab, ac) of the scaled barrier a*h."""
        a = self.scale
        return a * self.A, a * self.b, a * self.c

    def with_scale(self, scale: float) -> "QuadraticBarrier":
        return QuadraticBarrier(self.A, self.b, self.c, scale, self.upper_bound)

    def __call__(self, x) -> float:
        return barrier_eval(self, x)


@dataclass(frozen=True, eq=False)
class SafeSet:
    barriers: tuple[QuadraticBarrier, ...]

    def __post_init__(self):
        bars = tuple(self.barriers)
        if not bars:
            raise ContractViolation("a safe set needs at least one barrier")
        if len({bar.dim for bar in bars}) != 1:
            raise ContractViolation("barriers disagree on state dimension")
        object.__setattr__(self, "barriers", bars)

    @property
    def dim(self) -> int:
        return self.barriers[0].dim

    def values(self, x) -> np.ndarray:
        return np.array([barrier_eval(bar, x) for bar in self.barriers])

    def __contains__(self, x) -> bool:
        return safe_set_contains(self, x)


@dataclass(frozen=True, eq=False)
class NominalPolicy:
    """u_nom = fn(k, x); ``kind``/``params`` identify it in the registry."""

    fn: Callable[[int, np.ndarray], np.ndarray]
    kind: str = "custom"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __call__(self, k: int, x: np.ndarray) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(k, x), dtype=float))


@dataclass(frozen=True, eq=False)
class Scenario:
    """A closed-loop experiment: system, safe set, one condition per barrier.

    ``conditions[i]`` constrains ``safe_set.barriers[conditions[i].barrier_index]``.
    """

    system: ControlAffineSystem
    safe_set: SafeSet
    conditions: tuple
    horizon: int
    initial_state: np.ndarray
    nominal_policy: NominalPolicy
    dt: float = 0.01
    name: str = ""
    description: str = ""

    def __post_init__(self):
        x0 = _frozen(self.initial_state, 1, "initial_state")
        object.__setattr__(self, "initial_state", x0)
        object.__setattr__(self, "conditions", tuple(self.conditions))
        if self.horizon < 1:
            raise ContractViolation("horizon must be >= 1")
        if not self.dt > 0:
            raise ContractViolation("dt must be positive")
        if x0.shape[0] != self.system.state_dim or self.safe_set.dim != self.system.state_dim:
            raise ContractViolation("state dimension mismatch between system, safe set and x0")
        if not self.conditions:
            raise ContractViolation("scenario needs at least one condition")
        for cond in self.conditions:
            if not 0 <= cond.barrier_index < len(self.safe_set.barriers):
                raise ContractViolation(f"condition refers to missing barrier {cond.barrier_index}")
        if not safe_set_contains(self.safe_set, x0):
            raise ContractViolation("initial_state lies outside the safe set")

    def barrier_for(self, cond) -> QuadraticBarrier:
        return self.safe_set.barriers[cond.barrier_index]

    def replace(self, **changes) -> "Scenario":
        fields = dict(system=self.system, safe_set=self.safe_set, conditions=self.conditions,
                      horizon=self.horizon, initial_state=self.initial_state,
                      nominal_policy=self.nominal_policy, dt=self.dt, name=self.name,
                      description=self.description)
        fields.update(changes)
        return Scenario(**fields)


def _vec(x, n: int, name: str) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (n,):
        raise ContractViolation(f"{name} must have shape ({n},), got {x.shape}")
    return x


def drift_eval(sys: ControlAffineSystem, x, u) -> np.ndarray:
    """Noise-free next state F(x, u) = f(x) + g(x) u."""
    x = _vec(x, sys.state_dim, "x")
    u = _vec(u, sys.input_dim, "u")
    return sys.f(x) + sys.g(x) @ u


def barrier_eval(bar: QuadraticBarrier, x) -> float:
    """Unscaled h(x)."""
    x = _vec(x, bar.dim, "x")
    return float(x @ bar.A @ x + bar.b @ x + bar.c)


def scaled_barrier_eval(bar: QuadraticBarrier, x) -> float:
    return bar.scale * barrier_eval(bar, x)


def safe_set_contains(s: SafeSet, x) -> bool:
    return all(barrier_eval(bar, x) >= 0.0 for bar in s.barriers)


# -- registries ---------------------------------------------------------------

_DYNAMICS: dict[str, Callable[..., tuple]] = {}
_POLICIES: dict[str, Callable[..., Callable]] = {}


def register_dynamics(name: str):
    """Register ``factory(**params) -> (state_dim, input_dim, drift, input_map)``."""
    def deco(factory):
        _DYNAMICS[name] = factory
        return factory
    return deco


def register_policy(name: str):
    """Register ``factory(**params) -> fn(k, x)``."""
    def deco(factory):
        _POLICIES[name] = factory
        return factory
    return deco


def make_dynamics(kind: str, noise_cov, **params) -> ControlAffineSystem:
    try:
        factory = _DYNAMICS[kind]
    except KeyError:
        raise ContractViolation(f"unknown dynamics {kind!r}; known: {sorted(_DYNAMICS)}") from None
    n, m, f, g = factory(**params)
    return ControlAffineSystem(n, m, f, g, noise_cov, kind=kind, params=dict(params))


def make_policy(kind: str, **params) -> NominalPolicy:
    try:
        factory = _POLICIES[kind]
    except KeyError:
        raise ContractViolation(f"unknown policy {kind!r}; known: {sorted(_POLICIES)}") from None
    return NominalPolicy(factory(**params), kind=kind, params=dict(params))


@register_dynamics("integrator")
def _integrator(dim: int = 1, dt: float = 0.01):
    """x+ = x + u dt."""
    G = dt * np.eye(dim)
    return dim, dim, (lambda x: np.array(x, dtype=float)), (lambda x: G)


@register_dynamics("pendulum")
def _pendulum(dt: float = 0.01):
    """Euler-discretized inverted pendulum about upright, state (theta, theta_dot)."""
    G = np.array([[0.0], [dt]])

    def f(x):
        return np.array([x[0] + dt * x[1], x[1] + dt * np.sin(x[0])])

    return 2, 1, f, (lambda x: G)


@register_policy("zero")
def _zero_policy(dim: int = 1):
    u = np.zeros(dim)
    return lambda k, x: u


@register_policy("negative_state")
def _negative_state(gain: float = 1.0):
    return lambda k, x: -gain * np.asarray(x, dtype=float)


@register_policy("goal_proportional")
def _goal_proportional(goal, gain: float = 1.0):
    goal = np.asarray(goal, dtype=float)
    return lambda k, x: -gain * (np.asarray(x, dtype=float) - goal)


# -- JSON ---------------------------------------------------------------------

def _barrier_to_dict(bar: QuadraticBarrier) -> dict:
    return {"A": bar.A.tolist(), "b": bar.b.tolist(), "c": bar.c, "scale": bar.scale,
            "upper_bound": bar.upper_bound}


def _barrier_from_dict(d: Mapping) -> QuadraticBarrier:
    return QuadraticBarrier(d["A"], d["b"], d["c"], d.get("scale", 1.0), d.get("upper_bound"))


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Mapping):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.generic):
        return value.item()
    return value


def scenario_to_dict(sc: Scenario) -> dict:
    from .cbf_constraints import condition_to_dict

    if sc.system.kind == "custom" or sc.nominal_policy.kind == "custom":
        raise ContractViolation("only registry-built dynamics and policies can be serialized")
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "description": sc.description,
        "system": {"kind": sc.system.kind, "params": _jsonable(sc.system.params),
                   "noise_cov": sc.system.noise_cov.tolist()},
        "safe_set": [_barrier_to_dict(bar) for bar in sc.safe_set.barriers],
        "conditions": [condition_to_dict(c) for c in sc.conditions],
        "horizon": sc.horizon,
        "initial_state": sc.initial_state.tolist(),
        "nominal_policy": {"kind": sc.nominal_policy.kind,
                           "params": _jsonable(sc.nominal_policy.params)},
        "dt": sc.dt,
    }


def scenario_from_dict(d: Mapping) -> Scenario:
    from .cbf_constraints import condition_from_dict

    version = d.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ContractViolation(f"unsupported scenario schema_version {version}")
    sysd = d["system"]
    return Scenario(
        system=make_dynamics(sysd["kind"], sysd["noise_cov"], **sysd.get("params", {})),
        safe_set=SafeSet(tuple(_barrier_from_dict(b) for b in d["safe_set"])),
        conditions=tuple(condition_from_dict(c) for c in d["conditions"]),
        horizon=int(d["horizon"]),
        initial_state=d["initial_state"],
        nominal_policy=make_policy(d["nominal_policy"]["kind"],
                                   **d["nominal_policy"].get("params", {})),
        dt=float(d.get("dt", 0.01)),
        name=d.get("name", ""),
        description=d.get("description", ""),
    )


def scenario_to_json(sc: Scenario, indent: int | None = 2) -> str:
    return json.dumps(scenario_to_dict(sc), indent=indent)


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))
