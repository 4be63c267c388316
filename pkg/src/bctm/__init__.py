"""Box-Cox transformation cure models for interval-censored data."""

__version__ = "0.1.0"

from .em import EmConfig, FitResult, fit_em, mstep_maximize, profile_fit, standard_errors
from .exceptions import (
    BctmError,
    DegenerateIncidenceError,
    DomainError,
    LikelihoodDegenerateError,
    NumericalDerivativeError,
    RootFindingError,
)
from .likelihood import (
    Dataset,
    EStepWeights,
    IntervalObservation,
    aic,
    complete_loglik,
    estep_weights,
    loglik_gradient,
    numerical_hessian,
    observed_loglik,
    q_function,
)
from .model import (
    BctmParameters,
    CovariateProfile,
    KnotGrid,
    baseline_cum_hazard,
    baseline_hazard,
    box_cox,
    cure_rate,
    latency_survival,
    population_survival,
    susceptible_survival,
    transform_link,
)
from .npmle import (
    InitBundle,
    NpmleEstimate,
    empirical_baseline_hazard,
    initial_psi_from_curve,
    loglog_regression_gamma0,
    npmle_initialize,
    solve_beta0_system,
    suggest_cutpoints,
    turnbull_npmle,
)
from .simulation import (
    MonteCarloReport,
    SimScenario,
    generate_dataset,
    initial_coeffs_perturbed,
    initial_psi,
    monte_carlo_study,
    select_cutpoints_quantile,
)
