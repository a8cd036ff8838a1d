"""Safety filters for discrete-time stochastic control-affine systems built on
quadratic control barrier functions, with supermartingale bounds on the
probability of leaving the safe set within K steps."""

__version__ = "0.1.0"

from .cbf_constraints import (
    AlphaOutOfRange,
    CMartingale,
    ExpQuadratic,
    LinearZeroing,
    PolynomialSquared,
    UnsupportedBarrierForm,
    condition_residual,
    convexity_certificate,
    max_feasible_alpha,
    max_feasible_beta_poly,
    residual_model,
)
from .core_types import (
    ContractViolation,
    ControlAffineSystem,
    NominalPolicy,
    QuadraticBarrier,
    SafeSet,
    Scenario,
    barrier_eval,
    drift_eval,
    make_dynamics,
    make_policy,
    register_dynamics,
    register_policy,
    safe_set_contains,
    scenario_from_json,
    scenario_to_json,
)
from .exit_bounds import BoundReport, bound_grid, condition_bound, scenario_bound
from .gaussian_moments import (
    LambdaNotPD,
    expected_exp_neg_quadratic,
    expected_square_centered_quadratic,
    mc_expectation_oracle,
)
from .safety_filter import (
    FilterResult,
    Infeasible,
    NoConvergence,
    SolverOptions,
    filter_step,
    filter_step_multi,
)
from .scenarios import PRESET_IDS, preset
from .sim_harness import (
    EmpiricalResult,
    TrajectoryRecord,
    audit_supermartingale,
    clopper_pearson,
    run_monte_carlo,
    simulate_trajectory,
)
