"""Latent class choice models with mixture-model class membership.

Estimates three families over panel choice data with an EM engine and a
BFGS inner solver:

* ``gbm-lccm`` -- latent class choice model whose membership component is
  a joint Gaussian (continuous characteristics) and Bernoulli (binary
  characteristics) mixture, with full/tied/diagonal/spherical covariance
  structures;
* ``lccm`` -- the traditional latent class choice model with a logit
  membership component;
* ``mnl`` -- the plain multinomial logit.

Model selection (AIC/BIC), k-fold cross-validation, value-of-time, class
profiling, and finite-difference standard errors live in
:mod:`lcmix.metrics`; synthetic-data generation for parameter-recovery
studies lives in :mod:`lcmix.data`.
"""

from .data import (
    ChoiceDataset,
    ChoiceSituation,
    DatasetSchema,
    PersonRecord,
    StandardizationRecord,
    UniformAttributeSampler,
    enumerate_count_alternatives,
    load_dataset,
    save_dataset,
    simulate_dataset,
    split_folds,
    standardize,
)
from .em import (
    FitResult,
    GbmLccmParams,
    LccmParams,
    ModelSpec,
    estimate,
    fit_gbm_lccm,
    fit_lccm,
    predict,
    run_restarts,
)
from .errors import EstimationError, LcmixError, ValidationError
from .metrics import (
    ModelSummary,
    class_profile,
    count_params,
    cross_validate,
    information_criteria,
    standard_errors,
    value_of_time,
)
from .mixture import COVARIANCE_STRUCTURES, GbmMembershipParams
from .mnl import MnlParams, fit_mnl, fit_weighted_mnl
from .optim import OptimResult, bfgs_maximize, check_gradient

__version__ = "0.1.0"
