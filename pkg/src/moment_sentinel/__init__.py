"""Anomaly detection from truncated moment sequences.

A detector is fit by estimating the moments of normal-state data up to a
chosen degree; a query point is scored with a certified upper bound on
the probability mass any distribution with those moments can place in a
small neighborhood of the point, computed via a semidefinite relaxation.
Low bound = anomalous.
"""

from .multiindex import MultiIndex, MonomialBasis, add, basis_size, enumerate_basis
from .moments import (
    DegenerateDataError,
    MomentSequence,
    Polynomial,
    Whitener,
    estimate_moments,
    fit_whitener,
    riesz,
)
from .sdp_core import (
    ConicProgram,
    ConicSolution,
    LinearEquality,
    PsdBlock,
    SolveStatus,
    SolverOptions,
    numerical_rank,
    psd_min_eigenvalue,
    solve,
)
from .relaxation import (
    BoundResult,
    LocalizingLayout,
    MomentMatrixLayout,
    RankCertificate,
    SemialgebraicSet,
    assemble_upper_bound,
    localizing_layout,
    lower_bound,
    moment_matrix_layout,
    rank_optimality,
    upper_bound,
)
from .detector import (
    ClassificationError,
    DetectorModel,
    Score,
    classify,
    fit,
    neighborhood,
    score,
    score_many,
)
from .baseline_kde import KdeModel, kde_fit, kde_score
from .evalharness import (
    ExperimentResult,
    ExperimentSpec,
    LabeledScores,
    auc,
    gen_bimodal,
    gen_outliers,
    gen_pshape,
    gen_swissroll,
    roc,
    run_experiment,
)

__version__ = "0.1.0"
