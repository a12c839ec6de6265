"""Plausible GMM: quasi-Bayesian inference for moment models with a prior on misspecification."""

from .coverage_sim import CoverageReport, fixed_mu_coverage, fixed_mu_coverage_multi, two_stage_coverage
from .criterion import (
    ContinuousUpdating,
    FixedMatrix,
    PluginAtPoint,
    QuasiPosterior,
    log_quasi_posterior,
    q_criterion,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    EvaluationError,
    InitializationError,
    NumericalError,
    OptimizationError,
    PgmmError,
    RankError,
    SimulationError,
)
from .inference import (
    HpdRegion,
    IntervalEstimate,
    bayes_decision,
    hpd_interval,
    hpd_region,
    posterior_quantile_interval,
    t4_interval,
    union_interval,
)
from .local_approx import LocalApprox, OptConfig, gaussian_approx, gmm_estimate, local_interval
from .models import (
    BernoulliTreatment,
    IvqrModel,
    LinearIvFamily,
    LinearIvLogNormal,
    LinearIvModel,
    MedianRegLogNormal,
)
from .moment_model import Dataset, FunctionModel, MomentModel, moment_covariance, sample_moments
from .priors import (
    Dogmatic,
    FlatOnBox,
    Gaussian,
    GaussianLocal,
    GaussianTheta,
    UniformBox,
    UniformEllipse,
    build_ivqr_delta_prior,
    build_linear_iv_prior,
)
from .sampler import ChainConfig, PosteriorDraws, sample_conditional_theta, sample_joint

__version__ = "0.1.0"
