"""Estimators of shape distance between neural representations."""

__version__ = "0.1.0"

from shapedist.errors import (
    DataError,
    InfeasibleError,
    InsufficientSamplesError,
    NumericalError,
    ShapeDistError,
)
from shapedist.linalg import SvdResult, nuclear_norm, random_orthogonal, svd
from shapedist.plugin import (
    CovarianceSet,
    EstimateReport,
    EstimatorKind,
    ResponseMatrix,
    center_columns,
    covariance_set,
    empirical_covariance,
    empirical_cross_covariance,
    plugin_cosine_similarity,
    plugin_squared_procrustes,
    split_trial_covariance,
)
from shapedist.moments import (
    EigenmomentVector,
    GramPair,
    MomentCovariance,
    bootstrap_moment_covariance,
    confidence_interval,
    eigenmoment,
    estimate_moments,
    gram_pair,
    moment_cosine_similarity,
    moment_nuclear_norm,
    rescale_factor,
)
from shapedist.qp import (
    CoefficientSolution,
    QpSolution,
    QuadraticProgram,
    build_bias_variance_qp,
    select_coefficients,
    solve_qp,
)
from shapedist.bounds import (
    BoundParams,
    ginibre_nuclear_asymptote,
    lemma1_bound,
    lemma2_bound,
    plugin_error_lower_bound,
    quarter_circle_density,
    theorem1_bound,
)
from shapedist.synthetic import (
    GroundTruthModel,
    NoiseConfig,
    make_ground_truth,
    rademacher_pair,
    sample_responses,
    verify_lower_bound_experiment,
)
