"""Doubly robust estimation for logistic partially linear models."""

from .model import (
    Basis,
    BasisTerm,
    BinaryInstrument,
    ConvergenceError,
    CovariateModelParams,
    Dataset,
    EstimationError,
    FiniteLaw,
    InstrumentSpec,
    LinearInstrument,
    OutcomeModelParams,
    SingularMatrixError,
    calibrated_residual,
    calibrated_residual_y1,
    covariate_means,
    ee_dr,
    ee_dr_y1,
    ee_instrument,
    expit,
    instrument_matrix,
    instrument_matrices,
    logistic_finite_law,
    ortho_complement_identity_gap,
    response_prob,
)
from .nuisance import (
    CovariateFit,
    OutcomeFit,
    fit_covariate,
    fit_covariate_y1,
    fit_outcome_calibrated,
    fit_outcome_mle,
)
from .estimators import (
    EfficiencyComparison,
    EstimateReport,
    InfluencePieces,
    SolveDiagnostics,
    assemble_influence,
    closed_form_binary,
    compare_efficiency,
    solve_dr,
    solve_dr_y1,
)

__version__ = "0.1.0"
