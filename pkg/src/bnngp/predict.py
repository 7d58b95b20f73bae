"""Posterior predictive moments under fitted parameters, and test metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import InputError
from .kernels import HyperParams, _as_design, cross_kernel, kernel_diag
from .lowrank import NystromFactor, lowrank_solve


@dataclass(frozen=True)
class PredictiveMoments:
    """Predictive means and variances (noise included), one entry per test point."""

    mu_star: np.ndarray
    var_star: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_star, dtype=float))
        var = np.atleast_1d(np.asarray(self.var_star, dtype=float))
        if mu.shape != var.shape or mu.ndim != 1:
            raise InputError(f"mean and variance shapes differ: {mu.shape} vs {var.shape}")
        object.__setattr__(self, "mu_star", mu)
        object.__setattr__(self, "var_star", var)

    def __len__(self):
        return self.mu_star.size


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    mse: float
    rmse: float
    mese: float
    sdese: float
    n_test: int
    scale: str = "standardized"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("mae", "mse", "rmse", "mese", "sdese", "n_test", "scale")}


def predictive_moments(x_star, X_train, y_train, theta_hat: HyperParams, factor: NystromFactor,
                       batch_size: int = 1024) -> PredictiveMoments:
    """Gaussian predictive mean and variance at each row of ``x_star``.

    ``k*`` is split into its Nystrom projection ``V^T V*`` (``V* = L^{-1}
    K[S, *]``) and a residual. The projected part has closed forms in the
    capacitance matrix B that avoid dividing a cancellation by the noise
    variance, which keeps near-interpolating fits accurate; the total is
    algebraically the plain ``k*^T K^{-1} y`` and ``k*^T K^{-1} k*``.

    The epistemic part ``k** - k*^T K^{-1} k*`` is floored at zero, so every
    returned variance is at least the noise variance.
    """
    x_star = _as_design(x_star, "x_star")
    X_train = _as_design(X_train, "X_train")
    y_train = np.asarray(y_train, dtype=float)
    if X_train.shape[0] != factor.n or y_train.shape != (factor.n,):
        raise InputError("training inputs/targets do not match the factor")
    if x_star.shape[1] != X_train.shape[1]:
        raise InputError(f"test inputs have {x_star.shape[1]} columns, training inputs {X_train.shape[1]}")
    s = factor.sigma_eps2
    V = factor.V
    weights = lowrank_solve(factor, y_train)
    t = sla.cho_solve((factor.chol_B, True), V @ y_train, check_finite=False) / s
    mu = np.empty(x_star.shape[0])
    var = np.empty(x_star.shape[0])
    for start in range(0, x_star.shape[0], batch_size):
        rows = slice(start, start + batch_size)
        Ks = cross_kernel(X_train, x_star[rows], theta_hat)
        Vs = sla.solve_triangular(factor.chol_W, Ks[factor.anchors.indices], lower=True, check_finite=False)
        R = Ks - V.T @ Vs
        BiVs = sla.cho_solve((factor.chol_B, True), Vs, check_finite=False)
        mu[rows] = Vs.T @ t + R.T @ weights
        quad = (np.einsum("ij,ij->j", Vs, Vs - BiVs)
                + 2.0 * np.einsum("ij,ij->j", R, V.T @ BiVs) / s
                + np.einsum("ij,ij->j", R, lowrank_solve(factor, R)))
        epistemic = np.maximum(kernel_diag(x_star[rows], theta_hat) - quad, 0.0)
        var[rows] = epistemic + s
    return PredictiveMoments(mu, var)


def _fsum_mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / values.size


def compute_metrics(preds: PredictiveMoments, y_true, scale: str = "standardized") -> MetricsReport:
    y_true = np.asarray(y_true, dtype=float)
    if y_true.shape != preds.mu_star.shape:
        raise InputError(f"{len(preds)} predictions for {y_true.size} targets")
    n = y_true.size
    if n < 2:
        raise InputError("need at least two test points for the ESE standard deviation")
    err = preds.mu_star - y_true
    sq = err * err
    mse = _fsum_mean(sq)
    ese = sq + preds.var_star
    # summed as two exact-rounded means so MESE - MSE is the mean variance bit for bit
    mese = mse + _fsum_mean(preds.var_star)
    sdese = math.sqrt(math.fsum(((ese - mese) ** 2).tolist()) / (n - 1))
    return MetricsReport(
        mae=_fsum_mean(np.abs(err)),
        mse=mse,
        rmse=math.sqrt(mse),
        mese=mese,
        sdese=sdese,
        n_test=n,
        scale=scale,
    )
