"""Hyperbolic spin Calogero-Moser hierarchy toolkit.

Continuous higher flows with analytic gradients, an implicit integrable
time discretization, wave-function reconstruction with identity residuals,
and a CLI for simulation and verification runs.  All operations are pure
functions of immutable value states and are safe to call concurrently.
"""

__version__ = "0.1.0"

from .discrete import (
    DiscreteLevel,
    DiscreteSpec,
    DiscreteTrajectory,
    discrete_eom_residual,
    discrete_lax_residual,
    discrete_linear_problem_residual,
    discrete_m_matrix,
    discrete_residual,
    discrete_step,
    run_discrete,
)
from .errors import (
    ConditioningError,
    ConstraintViolationError,
    NewtonConvergenceError,
    PoleProximityError,
    RangeOverflowError,
    RankDeficiencyError,
    SingularConfigurationError,
    SpinCMError,
    StateFileError,
)
from .flows import (
    FlowSpec,
    Gradient,
    Tangent,
    Trajectory,
    conservation_report,
    explicit_second_flow_rhs,
    flow_map,
    flow_rhs,
    hamiltonian_trace_power,
    hierarchy_gradient,
    hierarchy_hamiltonian,
    integrate,
    pole_velocity_from_residue,
)
from .kp import (
    KpConstants,
    WaveVectors,
    bilinear_identity_residual,
    bilinear_identity_sides,
    default_spectral_point,
    default_w_samples,
    schrodinger_residual,
    tau_value,
    w1_and_potential,
    wave_function_pair,
    wave_vector_evolution_residual,
    wave_vectors,
)
from .phase_core import (
    LaxPair,
    commutation_identity_residual,
    exp_coordinates,
    lax_matrix,
    lax_pair,
    m_matrix,
    overlap_matrix,
    resolvent_residue_pair,
    resolvent_residue_single,
)
from .report import CheckResult, VerificationReport
from .state import SpinState, gauge_normalize, random_state
