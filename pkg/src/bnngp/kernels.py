"""Closed-form kernels induced by a one-hidden-layer BNN in the wide limit.

Every kernel is a function of the bivariate Gaussian law of the hidden
pre-activations ``z = a + u.x`` at two inputs, summarised by
:class:`PreactMoments`. The smooth kernels (tanh, sigmoid) use the usual
erf approximation of the activation; ReLU and LeakyReLU are exact.

The production kernel is the reduced mixture

    k_mix(x, x') = sb2 + sv2 * [w * k_tanh + (1 - w) * k_leaky_relu(alpha)]

All functions broadcast over numpy arrays so matrix assembly reuses the
scalar formulas verbatim.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

from .errors import InputError, NumericError, ParameterError

PARAM_NAMES = ("sigma_eps2", "sigma_a2", "sigma_u2", "sigma_b2", "sigma_v2", "alpha", "w")
VARIANCE_NAMES = PARAM_NAMES[:5]
# Column order used in reports of fitted parameters.
REPORT_ORDER = ("sigma_b2", "sigma_v2", "sigma_u2", "sigma_a2", "alpha", "w", "sigma_eps2")

_HALF_PI = 0.5 * np.pi
_EIGHTH_PI = 0.125 * np.pi
_INV_2PI = 0.5 / np.pi

_ROW_BLOCK = 2048


@dataclass(frozen=True)
class HyperParams:
    """Kernel and noise parameters.

    Variances must be strictly positive and ``alpha``, ``w`` lie in the open
    unit interval. :meth:`unchecked` builds boundary values for limit tests.
    """

    sigma_eps2: float = 1.0
    sigma_a2: float = 1.0
    sigma_u2: float = 1.0
    sigma_b2: float = 1.0
    sigma_v2: float = 1.0
    alpha: float = 0.5
    w: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, float(getattr(self, f.name)))
        check_interior(self)

    @classmethod
    def unchecked(cls, **kwargs) -> "HyperParams":
        obj = object.__new__(cls)
        base = {f.name: f.default for f in fields(cls)}
        base.update(kwargs)
        for name, value in base.items():
            object.__setattr__(obj, name, float(value))
        return obj

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES])

    @classmethod
    def from_array(cls, values, check: bool = True) -> "HyperParams":
        values = np.asarray(values, dtype=float)
        if values.shape != (len(PARAM_NAMES),):
            raise InputError(f"expected {len(PARAM_NAMES)} parameters, got shape {values.shape}")
        kwargs = dict(zip(PARAM_NAMES, values.tolist()))
        return cls(**kwargs) if check else cls.unchecked(**kwargs)

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def replace(self, check: bool = True, **changes) -> "HyperParams":
        values = self.to_dict()
        values.update(changes)
        return HyperParams(**values) if check else HyperParams.unchecked(**values)


def check_interior(theta: HyperParams) -> None:
    for name in VARIANCE_NAMES:
        value = getattr(theta, name)
        if not (np.isfinite(value) and value > 0.0):
            raise ParameterError(f"{name} must be a finite positive number, got {value!r}")
    for name in ("alpha", "w"):
        value = getattr(theta, name)
        if not (0.0 < value < 1.0):
            raise ParameterError(f"{name} must lie in the open interval (0, 1), got {value!r}")


@dataclass(frozen=True)
class PreactMoments:
    """Second moments of the pre-activation pair (z(x), z(x')).

    Fields may be scalars or equally shaped arrays.
    """

    var_z: float | np.ndarray
    var_zp: float | np.ndarray
    cov: float | np.ndarray
    rho: float | np.ndarray

    @classmethod
    def from_moments(cls, var_z, var_zp, cov) -> "PreactMoments":
        var_z = np.asarray(var_z, dtype=float)
        var_zp = np.asarray(var_zp, dtype=float)
        cov = np.asarray(cov, dtype=float)
        rho = np.clip(cov / np.sqrt(var_z * var_zp), -1.0, 1.0)
        return cls(_unwrap(var_z), _unwrap(var_zp), _unwrap(cov), _unwrap(rho))

    @classmethod
    def from_correlation(cls, rho, var_z=1.0, var_zp=1.0) -> "PreactMoments":
        """Moments with a prescribed correlation; handy for curve probes."""
        rho = np.clip(np.asarray(rho, dtype=float), -1.0, 1.0)
        var_z = np.asarray(var_z, dtype=float)
        var_zp = np.asarray(var_zp, dtype=float)
        cov = rho * np.sqrt(var_z * var_zp)
        return cls(_unwrap(var_z), _unwrap(var_zp), _unwrap(cov), _unwrap(rho))


def _unwrap(a: np.ndarray):
    return float(a) if a.ndim == 0 else a


def _check_variances(sigma_a2: float, sigma_u2: float) -> None:
    if not (sigma_a2 > 0.0 and sigma_u2 > 0.0):
        raise ParameterError(f"sigma_a2 and sigma_u2 must be positive, got {sigma_a2!r}, {sigma_u2!r}")


def preactivation_moments(x, x_prime, sigma_a2: float, sigma_u2: float) -> PreactMoments:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.ndim != 1 or x.shape != x_prime.shape or x.size == 0:
        raise InputError(f"inputs must be non-empty vectors of equal length, got {x.shape} and {x_prime.shape}")
    _check_variances(sigma_a2, sigma_u2)
    return PreactMoments.from_moments(
        sigma_a2 + sigma_u2 * (x @ x),
        sigma_a2 + sigma_u2 * (x_prime @ x_prime),
        sigma_a2 + sigma_u2 * (x @ x_prime),
    )


def _arcsine(m: PreactMoments, gamma: float) -> np.ndarray:
    # rho * sigma_z * sigma_z' is written with the clamped rho so that the
    # argument inherits the clamp.
    num = gamma * np.asarray(m.rho) * np.sqrt(np.asarray(m.var_z) * np.asarray(m.var_zp))
    den = np.sqrt((1.0 + gamma * np.asarray(m.var_z)) * (1.0 + gamma * np.asarray(m.var_zp)))
    return np.arcsin(np.clip(num / den, -1.0, 1.0))


def k_tanh(m: PreactMoments):
    return _unwrap(np.asarray((2.0 / np.pi) * _arcsine(m, _HALF_PI)))


def k_sigmoid(m: PreactMoments):
    return _unwrap(np.asarray(0.25 + _INV_2PI * _arcsine(m, _EIGHTH_PI)))


def _arccos_shape(rho) -> np.ndarray:
    """S(rho) = [sqrt(1 - rho^2) + rho (pi - arccos rho)] / (2 pi)."""
    rho = np.clip(np.asarray(rho, dtype=float), -1.0, 1.0)
    return _INV_2PI * (np.sqrt(np.maximum(1.0 - rho * rho, 0.0)) + rho * (np.pi - np.arccos(rho)))


def k_relu(m: PreactMoments):
    scale = np.sqrt(np.asarray(m.var_z) * np.asarray(m.var_zp))
    return _unwrap(np.asarray(scale * _arccos_shape(m.rho)))


def k_leaky_relu(m: PreactMoments, alpha: float):
    rho = np.asarray(m.rho)
    scale = np.sqrt(np.asarray(m.var_z) * np.asarray(m.var_zp))
    return _unwrap(np.asarray(scale * (alpha * rho + (1.0 - alpha) ** 2 * _arccos_shape(rho))))


KERNELS: dict[str, Callable] = {
    "tanh": k_tanh,
    "sigmoid": k_sigmoid,
    "relu": k_relu,
    "leaky_relu": k_leaky_relu,
}


def activation_kernel(name: str, m: PreactMoments, alpha: float | None = None):
    if name not in KERNELS:
        raise InputError(f"unknown activation kernel {name!r}; choose from {sorted(KERNELS)}")
    if name == "leaky_relu":
        if alpha is None:
            raise InputError("leaky_relu kernel needs alpha")
        return k_leaky_relu(m, alpha)
    return KERNELS[name](m)


def _mix_from_moments(m: PreactMoments, theta: HyperParams):
    smooth = np.asarray(k_tanh(m))
    angular = np.asarray(k_leaky_relu(m, theta.alpha))
    return theta.sigma_b2 + theta.sigma_v2 * (theta.w * smooth + (1.0 - theta.w) * angular)


def k_mix(x, x_prime, theta: HyperParams) -> float:
    """Reduced mixed kernel for one input pair (noise not included)."""
    m = preactivation_moments(x, x_prime, theta.sigma_a2, theta.sigma_u2)
    return float(_mix_from_moments(m, theta))


def _as_design(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] == 0:
        raise InputError(f"{name} must be a 2-D array with at least one column, got shape {X.shape}")
    return X


def _pair_moments(Xa, Xb, sigma_a2, sigma_u2, sqa=None, sqb=None) -> PreactMoments:
    if sqa is None:
        sqa = np.einsum("ij,ij->i", Xa, Xa)
    if sqb is None:
        sqb = np.einsum("ij,ij->i", Xb, Xb)
    return PreactMoments.from_moments(
        (sigma_a2 + sigma_u2 * sqa)[:, None],
        (sigma_a2 + sigma_u2 * sqb)[None, :],
        sigma_a2 + sigma_u2 * (Xa @ Xb.T),
    )


def cross_kernel(Xa, Xb, theta: HyperParams) -> np.ndarray:
    Xa = _as_design(Xa, "Xa")
    Xb = _as_design(Xb, "Xb")
    if Xa.shape[1] != Xb.shape[1]:
        raise InputError(f"input dimensions differ: {Xa.shape[1]} vs {Xb.shape[1]}")
    _check_variances(theta.sigma_a2, theta.sigma_u2)
    sqb = np.einsum("ij,ij->i", Xb, Xb)
    out = np.empty((Xa.shape[0], Xb.shape[0]))
    for start in range(0, Xa.shape[0], _ROW_BLOCK):
        rows = slice(start, start + _ROW_BLOCK)
        m = _pair_moments(Xa[rows], Xb, theta.sigma_a2, theta.sigma_u2, sqb=sqb)
        out[rows] = _mix_from_moments(m, theta)
    return out


def kernel_matrix(X, theta: HyperParams) -> np.ndarray:
    """Symmetric n x n matrix of ``k_mix`` over the rows of ``X``."""
    X = _as_design(X)
    K = cross_kernel(X, X, theta)
    # mirror the upper triangle so K is exactly symmetric
    iu = np.triu_indices(K.shape[0], 1)
    K.T[iu] = K[iu]
    return K


def kernel_diag(X, theta: HyperParams, batch_size: int = _ROW_BLOCK) -> np.ndarray:
    """k_mix(x_i, x_i) for every row, batch by batch."""
    X = _as_design(X)
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], batch_size):
        block = X[start:start + batch_size]
        v = theta.sigma_a2 + theta.sigma_u2 * np.einsum("ij,ij->i", block, block)
        out[start:start + batch_size] = _mix_from_moments(PreactMoments.from_moments(v, v, v), theta)
    return out


# --- derivatives -----------------------------------------------------------


def _mix_partials(m: PreactMoments, theta: HyperParams):
    """Partial derivatives of the bracketed mixture wrt (cov, var_z, var_zp, alpha).

    Returns (smooth, angular, d_cov, d_vz, d_vzp, d_alpha) where the
    derivatives refer to ``w * smooth + (1 - w) * angular``.
    """
    vz = np.asarray(m.var_z, dtype=float)
    vzp = np.asarray(m.var_zp, dtype=float)
    rho = np.asarray(m.rho, dtype=float)
    alpha, w = theta.alpha, theta.w
    scale = np.sqrt(vz * vzp)
    cov = rho * scale

    # smooth part: (2/pi) arcsin(u), u = g c / sqrt((1 + g vz)(1 + g vzp))
    g = _HALF_PI
    den = np.sqrt((1.0 + g * vz) * (1.0 + g * vzp))
    u = np.clip(g * cov / den, -1.0, 1.0)
    smooth = (2.0 / np.pi) * np.arcsin(u)
    ds_du = (2.0 / np.pi) / np.sqrt(1.0 - u * u)
    ds_dc = ds_du * g / den
    ds_dvz = -ds_du * u * g / (2.0 * (1.0 + g * vz))
    ds_dvzp = -ds_du * u * g / (2.0 * (1.0 + g * vzp))

    # ReLU part R = scale * S(rho); dR/dc = S'(rho), dR/dscale = S - rho S'
    shape = _arccos_shape(rho)
    dshape = _INV_2PI * (np.pi - np.arccos(rho))
    relu = scale * shape
    dr_dscale = _INV_2PI * np.sqrt(np.maximum(1.0 - rho * rho, 0.0))
    dr_dvz = dr_dscale * scale / (2.0 * vz)
    dr_dvzp = dr_dscale * scale / (2.0 * vzp)

    c2 = (1.0 - alpha) ** 2
    angular = alpha * cov + c2 * relu
    da_dc = alpha + c2 * dshape
    da_dvz = c2 * dr_dvz
    da_dvzp = c2 * dr_dvzp
    da_dalpha = cov - 2.0 * (1.0 - alpha) * relu

    return (
        smooth,
        angular,
        w * ds_dc + (1.0 - w) * da_dc,
        w * ds_dvz + (1.0 - w) * da_dvz,
        w * ds_dvzp + (1.0 - w) * da_dvzp,
        (1.0 - w) * da_dalpha,
    )


def kernel_matrix_grads(Xa, Xb, theta: HyperParams) -> np.ndarray:
    """Derivatives of the noiseless cross-kernel, shape (7, na, nb).

    Slot 0 (noise variance) is all zeros: the noise enters only the
    diagonal of the training covariance and is handled by the caller.
    """
    Xa = _as_design(Xa, "Xa")
    Xb = _as_design(Xb, "Xb")
    if Xa.shape[1] != Xb.shape[1]:
        raise InputError(f"input dimensions differ: {Xa.shape[1]} vs {Xb.shape[1]}")
    sqa = np.einsum("ij,ij->i", Xa, Xa)
    sqb = np.einsum("ij,ij->i", Xb, Xb)
    dot = Xa @ Xb.T
    m = PreactMoments.from_moments(
        (theta.sigma_a2 + theta.sigma_u2 * sqa)[:, None],
        (theta.sigma_a2 + theta.sigma_u2 * sqb)[None, :],
        theta.sigma_a2 + theta.sigma_u2 * dot,
    )
    smooth, angular, d_c, d_vz, d_vzp, d_alpha = _mix_partials(m, theta)
    sv2 = theta.sigma_v2
    out = np.zeros((len(PARAM_NAMES), Xa.shape[0], Xb.shape[0]))
    out[1] = sv2 * (d_c + d_vz + d_vzp)
    out[2] = sv2 * (d_c * dot + d_vz * sqa[:, None] + d_vzp * sqb[None, :])
    out[3] = 1.0
    out[4] = theta.w * smooth + (1.0 - theta.w) * angular
    out[5] = sv2 * d_alpha
    out[6] = sv2 * (smooth - angular)
    return out


def kernel_grad(x, x_prime, theta: HyperParams, same_index: bool = False,
                mode: str = "analytic", rel_step: float = 1e-6) -> np.ndarray:
    """Gradient of one covariance entry wrt the 7 parameters.

    ``same_index`` marks a diagonal entry of the noisy training covariance,
    in which case the noise-variance component is 1.
    """
    check_interior(theta)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape or x.ndim != 1:
        raise InputError(f"inputs must be vectors of equal length, got {x.shape} and {x_prime.shape}")
    if mode == "analytic":
        grad = kernel_matrix_grads(x[None, :], x_prime[None, :], theta)[:, 0, 0]
    elif mode == "finite_difference":
        grad = np.zeros(len(PARAM_NAMES))
        base = theta.to_array()
        for j in range(1, len(PARAM_NAMES)):
            h = rel_step * abs(base[j])
            up, dn = base.copy(), base.copy()
            up[j] += h
            dn[j] -= h
            f_up = k_mix(x, x_prime, HyperParams.from_array(up, check=False))
            f_dn = k_mix(x, x_prime, HyperParams.from_array(dn, check=False))
            grad[j] = (f_up - f_dn) / (2.0 * h)
    else:
        raise InputError(f"unknown gradient mode {mode!r}")
    grad[0] = 1.0 if same_index else 0.0
    return grad


# --- shape probes ----------------------------------------------------------


DEFAULT_RHO_GRID = np.linspace(-0.999, 0.999, 401)


def kernel_curve(name: str, grid=None, alpha: float | None = None) -> np.ndarray:
    """Kernel value as a function of rho at unit pre-activation variances."""
    grid = DEFAULT_RHO_GRID if grid is None else np.asarray(grid, dtype=float)
    return np.asarray(activation_kernel(name, PreactMoments.from_correlation(grid), alpha), dtype=float)


def shape_correlation(kernel_a: str, kernel_b: str, grid=None, alpha: float | None = None) -> float:
    """Pearson correlation of two kernel curves over a grid of rho values.

    ``alpha`` is used by whichever of the two kernels is ``leaky_relu``.
    """
    grid = DEFAULT_RHO_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 100 or np.any(np.abs(grid) >= 1.0):
        raise InputError("grid must hold at least 100 rho values strictly inside (-1, 1)")
    curves = []
    for name in (kernel_a, kernel_b):
        raw = kernel_curve(name, grid, alpha)
        c = raw - raw.mean()
        norm = np.linalg.norm(c)
        if norm <= 1e-12 * max(np.linalg.norm(raw), 1e-300):
            raise NumericError(f"{name} curve is constant on the grid; correlation undefined")
        curves.append(c / norm)
    return float(np.clip(curves[0] @ curves[1], -1.0, 1.0))


def identifiability_probe_design(radii=None, angles=None, fixed_radius: float = 1.0) -> np.ndarray:
    """Input points in R^2 that separate the mixed-kernel parameters.

    Contains orthogonal equal-norm pairs ``(r e1, r e2)`` for each radius
    and points at ``fixed_radius`` spread over the given angles from ``e1``.
    """
    radii = np.linspace(0.2, 2.0, 10) if radii is None else np.asarray(radii, dtype=float)
    angles = np.linspace(0.0, np.pi, 10) if angles is None else np.asarray(angles, dtype=float)
    pts = [np.array([r, 0.0]) for r in radii] + [np.array([0.0, r]) for r in radii]
    pts += [fixed_radius * np.array([np.cos(a), np.sin(a)]) for a in angles]
    return np.vstack(pts)
