"""MAP estimation of the mixed-kernel hyperparameters.

The objective is the Gaussian negative log-likelihood under the Nystrom
covariance plus the negative log-prior (inverse-gamma on every variance,
Beta on ``alpha`` and ``w``). Gradients are analytic and never form an
n x n matrix; optimization runs Adam on log/logit coordinates for a fixed
number of full-batch epochs.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, InputError, NumericError, ParameterError
from .kernels import (
    PARAM_NAMES,
    VARIANCE_NAMES,
    HyperParams,
    _as_design,
    check_interior,
    kernel_diag,
    kernel_matrix_grads,
)
from .lowrank import AnchorSet, NystromFactor, lowrank_logdet, lowrank_solve, nystrom_factorize, select_anchors

log = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))
_PRIOR_KEYS = ("eps", "a", "u", "b", "v")


@dataclass(frozen=True)
class PriorConfig:
    """Inverse-gamma (shape, scale) per variance and Beta shapes for alpha and w."""

    inv_gamma: dict = field(default_factory=lambda: {q: (2.0, 1.0) for q in _PRIOR_KEYS})
    beta_alpha: tuple = (2.0, 2.0)
    beta_w: tuple = (2.0, 2.0)

    def __post_init__(self):
        if set(self.inv_gamma) != set(_PRIOR_KEYS):
            raise ConfigError(f"inv_gamma needs exactly the keys {_PRIOR_KEYS}, got {sorted(self.inv_gamma)}")
        pairs = list(self.inv_gamma.values()) + [self.beta_alpha, self.beta_w]
        for a, b in pairs:
            if not (a > 0 and b > 0):
                raise ConfigError(f"prior shapes and scales must be positive, got ({a}, {b})")

    def shapes_scales(self):
        a = np.array([self.inv_gamma[q][0] for q in _PRIOR_KEYS], dtype=float)
        b = np.array([self.inv_gamma[q][1] for q in _PRIOR_KEYS], dtype=float)
        return a, b


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    nugget_learning_rate: float = 1e-3
    rank: int = 500
    anchor_strategy: str = "first"
    anchor_seed: int = 0
    gradient_mode: str = "analytic"
    batch_mode: str = "full"
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    # fraction of the mean prior variance used to initialize the nugget; None keeps theta0's value
    nugget_eta: float | None = 0.04

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate < 0 or self.nugget_learning_rate < 0:
            raise ConfigError("learning rates must be nonnegative")
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.gradient_mode not in ("analytic", "finite_difference"):
            raise ConfigError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.batch_mode != "full":
            raise ConfigError(f"only batch_mode='full' is supported, got {self.batch_mode!r}")
        if self.anchor_strategy not in ("first", "kmeanspp"):
            raise ConfigError(f"unknown anchor_strategy {self.anchor_strategy!r}")
        if self.nugget_eta is not None and self.nugget_eta < 0:
            raise ConfigError("nugget_eta must be >= 0")


@dataclass(frozen=True)
class FitResult:
    theta_hat: HyperParams
    loss_trajectory: np.ndarray
    wall_time: float
    anchors: AnchorSet
    theta0: HyperParams


# --- prior ---------------------------------------------------------------


def log_prior(theta: HyperParams, priors: PriorConfig) -> float:
    """Log prior density up to additive constants."""
    check_interior(theta)
    a, b = priors.shapes_scales()
    var = np.array([getattr(theta, n) for n in VARIANCE_NAMES])
    out = -np.sum((a + 1.0) * np.log(var) + b / var)
    aa, ba = priors.beta_alpha
    aw, bw = priors.beta_w
    out += (aa - 1.0) * np.log(theta.alpha) + (ba - 1.0) * np.log1p(-theta.alpha)
    out += (aw - 1.0) * np.log(theta.w) + (bw - 1.0) * np.log1p(-theta.w)
    return float(out)


def log_prior_grad(theta: HyperParams, priors: PriorConfig) -> np.ndarray:
    a, b = priors.shapes_scales()
    var = np.array([getattr(theta, n) for n in VARIANCE_NAMES])
    g = np.empty(len(PARAM_NAMES))
    g[:5] = -(a + 1.0) / var + b / var**2
    aa, ba = priors.beta_alpha
    aw, bw = priors.beta_w
    g[5] = (aa - 1.0) / theta.alpha - (ba - 1.0) / (1.0 - theta.alpha)
    g[6] = (aw - 1.0) / theta.w - (bw - 1.0) / (1.0 - theta.w)
    return g


# --- likelihood ----------------------------------------------------------


def nll(y, factor: NystromFactor) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (factor.n,):
        raise InputError(f"y must have shape ({factor.n},), got {y.shape}")
    alpha = lowrank_solve(factor, y)
    return float(0.5 * (y @ alpha) + 0.5 * lowrank_logdet(factor) + 0.5 * factor.n * _LOG_2PI)


def nll_grad(y, X, theta: HyperParams, factor: NystromFactor) -> np.ndarray:
    """Gradient of :func:`nll` wrt the 7 parameters in O(n r^2).

    Uses dNLL/dt = -1/2 tr[(a a^T - K^{-1}) dK/dt] with a = K^{-1} y and
    dK/dt = dC B + B^T dC^T - B^T dW B (+ I for the noise), B = W^{-1} C^T.
    The Cholesky jitter is held fixed.
    """
    y = np.asarray(y, dtype=float)
    X = _as_design(X)
    s = factor.sigma_eps2
    n = factor.n
    idx = factor.anchors.indices
    V = factor.V
    Bw = sla.solve_triangular(factor.chol_W, V, lower=True, trans="T", check_finite=False)
    a = lowrank_solve(factor, y)

    capinv_V = sla.cho_solve((factor.chol_B, True), V, check_finite=False)
    trace_A = (n - np.sum(V * capinv_V) / s) / s
    BA = (Bw - (Bw @ V.T) @ capinv_V / s) / s
    G = np.outer(Bw @ a, a) - BA
    H = G @ Bw.T

    dK = kernel_matrix_grads(X, X[idx], theta)
    grad = np.empty(len(PARAM_NAMES))
    grad[0] = 0.5 * (trace_A - a @ a)
    for j in range(1, len(PARAM_NAMES)):
        dC = dK[j]
        tr = 2.0 * np.sum(G * dC.T) - np.sum(H * dC[idx])
        grad[j] = -0.5 * tr
    return grad


# --- MAP objective ---------------------------------------------------------


def _anchors_for(X, config: TrainConfig, anchors: AnchorSet | None) -> AnchorSet:
    if anchors is not None:
        return anchors
    r = min(config.rank, np.asarray(X).shape[0])
    return select_anchors(X, r, config.anchor_strategy, config.anchor_seed)


def map_loss(y, X, theta: HyperParams, priors: PriorConfig, config: TrainConfig | None = None,
             anchors: AnchorSet | None = None) -> float:
    config = config or TrainConfig()
    anchors = _anchors_for(X, config, anchors)
    factor = nystrom_factorize(X, theta, anchors)
    return nll(y, factor) - log_prior(theta, priors)


def map_grad(y, X, theta: HyperParams, priors: PriorConfig, config: TrainConfig | None = None,
             anchors: AnchorSet | None = None) -> np.ndarray:
    config = config or TrainConfig()
    check_interior(theta)
    anchors = _anchors_for(X, config, anchors)
    if config.gradient_mode == "finite_difference":
        return _fd_grad(lambda t: map_loss(y, X, t, priors, config, anchors), theta)
    factor = nystrom_factorize(X, theta, anchors)
    return nll_grad(y, X, theta, factor) - log_prior_grad(theta, priors)


def _fd_grad(fun, theta: HyperParams, rel_step: float = 1e-5) -> np.ndarray:
    base = theta.to_array()
    g = np.empty_like(base)
    for j in range(base.size):
        h = rel_step * abs(base[j])
        up, dn = base.copy(), base.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (fun(HyperParams.from_array(up)) - fun(HyperParams.from_array(dn))) / (2.0 * h)
    return g


def _loss_and_grad(y, X, theta, priors, config, anchors):
    factor = nystrom_factorize(X, theta, anchors)
    loss = nll(y, factor) - log_prior(theta, priors)
    if config.gradient_mode == "finite_difference":
        grad = _fd_grad(lambda t: map_loss(y, X, t, priors, config, anchors), theta)
    else:
        grad = nll_grad(y, X, theta, factor) - log_prior_grad(theta, priors)
    return loss, grad


# --- parameter transforms ----------------------------------------------------


def transform(theta: HyperParams) -> np.ndarray:
    """Map theta to R^7: log for variances, logit for alpha and w."""
    v = theta.to_array()
    u = np.empty_like(v)
    u[:5] = np.log(v[:5])
    u[5:] = np.log(v[5:]) - np.log1p(-v[5:])
    return u


def untransform(u) -> HyperParams:
    u = np.asarray(u, dtype=float)
    v = np.empty_like(u)
    v[:5] = np.exp(u[:5])
    v[5:] = 0.5 * (1.0 + np.tanh(0.5 * u[5:]))
    return HyperParams.from_array(v)


def transform_jacobian(theta: HyperParams) -> np.ndarray:
    """d theta / d u, elementwise (the transform is coordinate-wise)."""
    v = theta.to_array()
    jac = v.copy()
    jac[5:] = v[5:] * (1.0 - v[5:])
    return jac


# --- training loop ---------------------------------------------------------


def initial_nugget(X, theta: HyperParams, eta: float) -> float:
    return float(eta * np.mean(kernel_diag(X, theta)))


def fit(y, X, theta0: HyperParams, priors: PriorConfig | None = None, config: TrainConfig | None = None,
        anchors: AnchorSet | None = None) -> FitResult:
    """Fixed-budget MAP fit: exactly ``config.epochs`` full-batch Adam steps.

    Anchors are chosen once before the first step. ``loss_trajectory[t]``
    is the objective at the parameters entering step t.
    """
    priors = priors or PriorConfig()
    config = config or TrainConfig()
    X = _as_design(X)
    y = np.asarray(y, dtype=float)
    if y.shape != (X.shape[0],):
        raise InputError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    check_interior(theta0)
    if config.nugget_eta is not None:
        nugget = initial_nugget(X, theta0, config.nugget_eta)
        if not nugget > 0:
            raise ParameterError(f"nugget initialization gave {nugget}; use nugget_eta > 0")
        theta0 = theta0.replace(sigma_eps2=nugget)
    anchors = _anchors_for(X, config, anchors)

    lr = np.full(len(PARAM_NAMES), config.learning_rate)
    lr[0] = config.nugget_learning_rate
    u = transform(theta0)
    m = np.zeros_like(u)
    v = np.zeros_like(u)
    losses = np.empty(config.epochs)
    theta = theta0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        try:
            loss, grad = _loss_and_grad(y, X, theta, priors, config, anchors)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}; theta={theta.to_dict()}") from exc
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericError(f"non-finite objective at epoch {epoch}: loss={loss}, theta={theta.to_dict()}")
        losses[epoch] = loss
        g = grad * transform_jacobian(theta)
        m = config.beta1 * m + (1.0 - config.beta1) * g
        v = config.beta2 * v + (1.0 - config.beta2) * g * g
        m_hat = m / (1.0 - config.beta1 ** (epoch + 1))
        v_hat = v / (1.0 - config.beta2 ** (epoch + 1))
        step = lr * m_hat / (np.sqrt(v_hat) + config.eps_adam)
        u = u - step
        try:
            # coordinates that did not move keep their exact values
            values = np.where(step != 0.0, untransform(u).to_array(), theta.to_array())
            theta = HyperParams.from_array(values)
        except ParameterError as exc:
            raise NumericError(f"parameters left the admissible set at epoch {epoch}: {exc}") from exc
        log.debug("epoch %d loss %.6f", epoch, loss)
    return FitResult(theta, losses, time.perf_counter() - t0, anchors, theta0)
