"""Finite-width Monte-Carlo sampler for the shallow BNN prior.

Draws whole networks from the prior and evaluates them at probe inputs, so
the empirical covariance of the outputs can be compared with the analytic
infinite-width kernel. Hidden units are shared across activation blocks;
each block has its own output weights scaled by sqrt(w_m).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .kernels import HyperParams, PreactMoments, _as_design, activation_kernel

_ACTIVATIONS = {
    "tanh": np.tanh,
    "sigmoid": lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)),
    "relu": lambda z: np.maximum(z, 0.0),
}


def activation_fn(name: str, alpha: float | None = None):
    if name == "leaky_relu":
        if alpha is None:
            raise InputError("leaky_relu needs alpha")
        return lambda z: np.maximum(z, alpha * z)
    if name not in _ACTIVATIONS:
        raise InputError(f"unknown activation {name!r}")
    return _ACTIVATIONS[name]


@dataclass(frozen=True)
class BnnSpec:
    """Shallow BNN prior. ``activations`` entries are names or ("leaky_relu", alpha)."""

    H: int
    activations: tuple = ("relu",)
    weights: tuple = (1.0,)
    theta: HyperParams = HyperParams()
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.H < 1:
            raise InputError(f"H must be >= 1, got {self.H}")
        if self.n_samples < 1:
            raise InputError(f"n_samples must be >= 1, got {self.n_samples}")
        if len(self.activations) == 0 or len(self.activations) != len(self.weights):
            raise InputError("need one weight per activation block")
        if abs(sum(self.weights) - 1.0) > 1e-12 or min(self.weights) < 0:
            raise InputError(f"block weights must be nonnegative and sum to 1, got {self.weights}")

    def blocks(self):
        for act, wm in zip(self.activations, self.weights):
            if isinstance(act, (tuple, list)):
                name, alpha = act
            else:
                name, alpha = act, None
            yield name, alpha, wm


def sample_bnn(spec: BnnSpec, X_centered, chunk: int | None = None) -> np.ndarray:
    """Function values of ``n_samples`` prior networks at each row of X.

    Returns an array of shape (n_samples, n). Variances in ``spec.theta``
    may be zero (degenerate priors are allowed here).
    """
    X = _as_design(X_centered)
    n, I = X.shape
    th = spec.theta
    sd_a, sd_u = np.sqrt(th.sigma_a2), np.sqrt(th.sigma_u2)
    sd_v, sd_b = np.sqrt(th.sigma_v2 / spec.H), np.sqrt(th.sigma_b2)
    blocks = [(activation_fn(name, alpha), np.sqrt(wm)) for name, alpha, wm in spec.blocks()]
    if chunk is None:
        # keep the (chunk, H, n) pre-activation array around 32 MB
        chunk = max(1, min(spec.n_samples, 4_000_000 // max(1, spec.H * n)))
    streams = np.random.SeedSequence(spec.seed).spawn(spec.n_samples)
    n_blocks = len(blocks)
    out = np.empty((spec.n_samples, n))
    for start in range(0, spec.n_samples, chunk):
        m = min(chunk, spec.n_samples - start)
        a = np.empty((m, spec.H))
        U = np.empty((m, spec.H, I))
        b = np.empty(m)
        v = np.empty((n_blocks, m, spec.H))
        # one substream per draw, so the draws do not depend on the chunk size
        for k in range(m):
            rng = np.random.default_rng(streams[start + k])
            a[k] = rng.standard_normal(spec.H)
            U[k] = rng.standard_normal((spec.H, I))
            b[k] = rng.standard_normal()
            v[:, k] = rng.standard_normal((n_blocks, spec.H))
        z = sd_a * a[:, :, None] + sd_u * (U @ X.T)
        f = np.repeat(sd_b * b[:, None], n, axis=1)
        for (h, scale), vb in zip(blocks, v):
            f += scale * sd_v * np.einsum("sj,sjn->sn", vb, h(z))
        out[start:start + m] = f
    return out


def empirical_kernel(samples) -> np.ndarray:
    """Unbiased sample covariance (n_samples - 1 denominator) across draws."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise InputError("need a (n_samples >= 2, n) array of draws")
    centred = samples - samples.mean(axis=0)
    K = centred.T @ centred / (samples.shape[0] - 1)
    return 0.5 * (K + K.T)


def analytic_kernel(spec: BnnSpec, X_centered) -> np.ndarray:
    """Infinite-width covariance sb2 + sv2 * sum_m w_m K_m over the rows of X."""
    X = _as_design(X_centered)
    th = spec.theta
    sq = np.einsum("ij,ij->i", X, X)
    m = PreactMoments.from_moments(
        (th.sigma_a2 + th.sigma_u2 * sq)[:, None],
        (th.sigma_a2 + th.sigma_u2 * sq)[None, :],
        th.sigma_a2 + th.sigma_u2 * (X @ X.T),
    )
    K = np.full((X.shape[0], X.shape[0]), th.sigma_b2)
    for name, alpha, wm in spec.blocks():
        K += th.sigma_v2 * wm * np.asarray(activation_kernel(name, m, alpha))
    return K


def max_abs_error(spec: BnnSpec, X_centered) -> float:
    K_emp = empirical_kernel(sample_bnn(spec, X_centered))
    return float(np.max(np.abs(K_emp - analytic_kernel(spec, X_centered))))


def width_convergence_report(spec: BnnSpec, widths, X_probe, probe_set_id: str = "probe",
                             path=None) -> list[dict]:
    """Max abs deviation between empirical and analytic kernels for each width.

    Every width reuses ``spec`` with only H replaced. Rows are optionally
    written as CSV with columns H, n_samples, probe_set_id, max_abs_error.
    """
    rows = []
    for H in widths:
        s = BnnSpec(int(H), spec.activations, spec.weights, spec.theta, spec.n_samples, spec.seed)
        rows.append({
            "H": int(H),
            "n_samples": spec.n_samples,
            "probe_set_id": probe_set_id,
            "max_abs_error": max_abs_error(s, X_probe),
        })
    if path is not None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["H", "n_samples", "probe_set_id", "max_abs_error"])
            writer.writeheader()
            writer.writerows(rows)
    return rows


def default_probe_points(I: int = 3, n: int = 5, seed: int = 0) -> np.ndarray:
    """Fixed probe inputs inside the centred cube."""
    return np.random.default_rng(seed).random((n, I)) - 0.5
