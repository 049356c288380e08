"""Minimum phi-divergence estimation for linear-logistic latent class models
with binary items."""
from .asymptotics import (
    AsymptoticsReport,
    BirchDiagnostics,
    RankDeficientError,
    asymptotics_report,
    birch_diagnostics,
    information_matrix,
    manifest_covariance,
    parameter_covariance,
)
from .divergence import (
    PhiFunction,
    divergence,
    empirical_distribution,
    gradient_weights,
    log_likelihood,
    objective_gradient,
    phi_normalize,
    phi_power,
    power_divergence,
    power_phi,
    resolve_phi,
)
from .model import (
    ModelError,
    ModelSpec,
    ParameterVector,
    all_patterns,
    canonical_theta,
    class_weights,
    conditional_pattern_prob,
    eta_shift_direction,
    index_of,
    item_probabilities,
    manifest_distribution,
    manifest_jacobian,
    normalize_eta,
    pattern_of,
    relabelings,
    validate_spec,
)
from .optimizer import (
    FitResult,
    MultistartConfig,
    fine_improve,
    generate_initial_points,
    multistart_fit,
    rough_improve,
    stationary_refine,
)
from .simulation import (
    ContaminationSpec,
    SimulationPlan,
    SimulationSummary,
    contaminated_distribution,
    mse_summary,
    run_study,
    sample_dataset,
)

__version__ = "0.1.0"
