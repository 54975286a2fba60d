"""Population games on community networks with co-evolving densities.

A continuum of individuals plays a population game while migrating between
communities along a closed flow whose rates respond to the environment.
This package provides the coupled vector fields, deterministic integrators,
equilibrium and stability diagnostics, scenario documents with two built-in
case studies, and a CLI that exports trajectories as CSV with optional
figure rendering.
"""

from .analysis import (
    BalanceReport,
    ESSResult,
    EquilibriumReport,
    IFDReport,
    balance_residual,
    equilibrium_report,
    ess_2x2,
    ess_verify,
    ifd_check,
    lyapunov_P,
    lyapunov_rate_sign_check,
    q_matrix,
    restricted_nash_check,
)
from .dynamics import FieldOutput, closed_loop_field, flow_field, replicator_field
from .environment import (
    BestResponseEnvironment,
    ConstantEnvironment,
    OutMigrationEnvironment,
    SinusoidalCapacity,
    StaticCapacity,
    best_response_phi,
    community_payoff,
    evaluate_phi,
    kappa_sinusoidal,
    out_migration_phi_dot,
    softmax_response_phi,
)
from .errors import (
    ConfigurationError,
    EvaluationError,
    EvoflowError,
    IntegrationError,
    StateError,
    UsageError,
    ValidationFailure,
)
from .model import (
    CommunityNetwork,
    ExtendedState,
    GeneralRewards,
    MatrixGame,
    SystemState,
    ValidationReport,
    community_densities,
    population_state,
    validate_game,
    validate_network,
)
from .scenarios import (
    OutputConfig,
    Scenario,
    builtin_names,
    builtin_scenario,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from .solver import (
    ConvergenceReport,
    Diagnostics,
    Event,
    IntegratorConfig,
    Trajectory,
    check_trajectory_invariants,
    detect_convergence,
    integrate,
    step_rk4,
)

__version__ = "0.1.0"
