"""Propensity-score weighted marginal Cox models for multiple and
factorial treatments: balancing weights, weighted partial-likelihood
estimation of marginal hazard ratios, stacked sandwich and bootstrap
inference, weighted Kaplan-Meier curves, balance diagnostics, and a
Monte Carlo study harness."""

__version__ = "0.1.0"

from .data_model import (
    Cohort,
    ConvergenceError,
    FACTORIAL_CELLS,
    StudyError,
    ValidationError,
    decode_factorial,
    encode_factorial,
    factorial_treatment_labels,
    validate_cohort,
)
from .marginal_cox import (
    BootstrapResult,
    FitBundle,
    MhrEstimate,
    RiskProcesses,
    SandwichResult,
    ScoreResult,
    StackedPieces,
    bootstrap_covariance,
    confidence_intervals,
    evaluate_score,
    fit_mhr,
    fit_weighted_mhr,
    risk_processes,
    sandwich_covariance,
    stacked_pieces,
)
from .propensity import (
    BalanceReport,
    PropensityFit,
    TrimResult,
    WeightSet,
    balance_table,
    compute_weights,
    fit_multinomial_logit,
    multinomial_probs,
    parse_scheme,
    propensity_histogram,
    trim,
)
from .simulation import (
    EstimandResult,
    ScenarioConfig,
    StudyReport,
    calibrate_censoring,
    calibrate_intercepts,
    empirical_event_rates,
    gen_covariates,
    gen_outcomes,
    gen_treatment_factorial,
    gen_treatment_multi3,
    make_replicate,
    run_study,
    treatment_prevalences,
    true_estimand,
    true_propensities,
)
from .weighted_km import (
    KmCurve,
    cumulative_risk,
    export_km_csv,
    export_km_svg,
    km_curves,
    weighted_km,
)

__all__ = [
    "__version__",
    "Cohort",
    "ConvergenceError",
    "FACTORIAL_CELLS",
    "StudyError",
    "ValidationError",
    "decode_factorial",
    "encode_factorial",
    "factorial_treatment_labels",
    "validate_cohort",
    "BootstrapResult",
    "FitBundle",
    "MhrEstimate",
    "RiskProcesses",
    "SandwichResult",
    "ScoreResult",
    "StackedPieces",
    "bootstrap_covariance",
    "confidence_intervals",
    "evaluate_score",
    "fit_mhr",
    "fit_weighted_mhr",
    "risk_processes",
    "sandwich_covariance",
    "stacked_pieces",
    "BalanceReport",
    "PropensityFit",
    "TrimResult",
    "WeightSet",
    "balance_table",
    "compute_weights",
    "fit_multinomial_logit",
    "multinomial_probs",
    "parse_scheme",
    "propensity_histogram",
    "trim",
    "EstimandResult",
    "ScenarioConfig",
    "StudyReport",
    "calibrate_censoring",
    "calibrate_intercepts",
    "empirical_event_rates",
    "gen_covariates",
    "gen_outcomes",
    "gen_treatment_factorial",
    "gen_treatment_multi3",
    "make_replicate",
    "run_study",
    "treatment_prevalences",
    "true_estimand",
    "true_propensities",
    "KmCurve",
    "cumulative_risk",
    "export_km_csv",
    "export_km_svg",
    "km_curves",
    "weighted_km",
]
