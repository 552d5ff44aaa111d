"""Balancing-weight estimation of restricted mean survival contrasts under
covariate-dependent censoring, with closed-form and bootstrap inference and
a Monte Carlo study harness."""

from .censoring import CensoringFit, censoring_survival, fit_censoring_cox
from .data import (
    ColumnSchema,
    ObservationalDataset,
    StepFunction,
    eval_step,
    load_dataset,
    save_dataset,
    save_survival_curve,
)
from .estimator import (
    RmcstResult,
    SchemeFit,
    WeightedCumulativeHazard,
    fit_scheme,
    point_estimates,
    restricted_mean,
    rmcst_estimate,
    survival_curve,
    weighted_nelson_aalen,
)
from .inference import (
    InfluenceContributions,
    analyze,
    bootstrap_all,
    bootstrap_ci,
    closed_form_inference,
    closed_form_variance,
    influence_contributions,
)
from .logistic import PropensityFit, fit_logistic, predict_ps
from .simulation import (
    SimulationReport,
    SimulationScenario,
    TruthTable,
    calibrate_intercept,
    compute_truth,
    generate_dataset,
    run_study,
)
from .weights import (
    BalanceTable,
    WeightAssignment,
    WeightScheme,
    compute_weights,
    parse_scheme,
    weighted_covariate_means,
)

__version__ = "0.1.0"
