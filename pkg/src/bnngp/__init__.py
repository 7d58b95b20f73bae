"""Gaussian-process regression with the mixed kernel of a wide shallow BNN."""

from .errors import BnnGpError, ConfigError, DataError, InputError, NumericError, ParameterError
from .kernels import (
    HyperParams,
    PreactMoments,
    cross_kernel,
    k_leaky_relu,
    k_mix,
    k_relu,
    k_sigmoid,
    k_tanh,
    kernel_grad,
    kernel_matrix,
    preactivation_moments,
    shape_correlation,
)
from .lowrank import (
    AnchorSet,
    NystromFactor,
    lowrank_logdet,
    lowrank_solve,
    nystrom_factorize,
    select_anchors_first,
    select_anchors_kmeanspp,
)
from .predict import MetricsReport, PredictiveMoments, compute_metrics, predictive_moments
from .training import FitResult, PriorConfig, TrainConfig, fit, log_prior, map_grad, map_loss, nll

__version__ = "0.1.0"
