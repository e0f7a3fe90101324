"""Privacy-preserving estimation of individualized treatment rules.

Blip-function coefficients are estimated by weighted least squares with
balancing weights, under three data regimes: centralized individual-level
data (the gold standard), covariate microaggregation (data pooling), and
distributed regression from per-site matrix summaries. A Monte Carlo harness
evaluates bias and variability of the three regimes under model
misspecification.
"""
from .basis import evaluate_basis
from .dataset import Dataset, read_csv, write_csv
from .datagen import (
    ApplicationConfig,
    PredictorSpec,
    ScenarioConfig,
    default_application_config,
    generate_application_style,
    generate_binary_treatment,
    generate_continuous_treatment,
    generate_covariates,
    generate_outcome,
    generate_replicate,
    scenario,
    scenario_table,
)
from .distributed import (
    AggregateState,
    SiteSummary,
    aggregate_summaries,
    compute_site_summary,
    deserialize_summary,
    read_summary,
    serialize_summary,
    solve_distributed,
    summary_from_design,
    write_summary,
)
from .gdwols import (
    BlipEstimate,
    DesignSpec,
    DoseDecision,
    DoseRange,
    build_outcome_design,
    fit_gdwols,
    optimal_binary_rule,
    optimal_dose,
)
from .glm import LogisticFit, WlsFit, fit_linear_gaussian, fit_logistic, fit_wls
from .harness import (
    ANALYSIS_SCENARIOS,
    MetricsReport,
    compare_to_reference,
    compute_metrics,
    load_reference,
    run_grid,
)
from .pooling import (
    PoolAssignment,
    PooledDataset,
    aggregate,
    assign_pools,
    fit_pooled_gdwols,
)
from .weights import (
    TreatmentModelSpec,
    WeightVector,
    binary_weights,
    continuous_ipw_weights,
    pooled_binary_weights,
    pooled_continuous_ipw_weights,
)

__version__ = "0.1.0"
