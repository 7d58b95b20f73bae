"""Synthetic scenario generation: input designs, nugget calibration, Vecchia sampling.

Latent draws use an exact Cholesky block for the first ``n_init`` points
and then, point by point, the Gaussian conditional given the
``n_neighbors`` nearest previously sampled points.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .errors import DataError, InputError
from .kernels import HyperParams, _as_design, cross_kernel, kernel_diag, kernel_matrix
from .lowrank import jittered_cholesky

# scenario id -> (design, input dimension, n)
SCENARIOS = {
    "C1": ("uniform", 20, 10_000),
    "C2": ("uniform", 80, 10_000),
    "C3": ("uniform", 20, 20_000),
    "C4": ("uniform", 80, 20_000),
    "C5": ("uniform", 20, 50_000),
    "C6": ("uniform", 80, 50_000),
    "C7": ("stratified", 20, 50_000),
    "C8": ("stratified", 80, 50_000),
}

DEFAULT_ETA = 0.04
# full kernel matrix is cached for the Vecchia loop up to this many points
_DENSE_CACHE_LIMIT = 4096


@dataclass(frozen=True)
class DesignSpec:
    n: int
    I: int
    design: str = "uniform"
    seed: int = 0
    strata: tuple | None = None

    def __post_init__(self):
        if self.n < 1 or self.I < 1:
            raise InputError(f"design needs n >= 1 and I >= 1, got n={self.n}, I={self.I}")
        if self.design not in ("uniform", "stratified"):
            raise InputError(f"unknown design {self.design!r}")
        if self.strata is not None:
            q_r, q_a = self.strata
            if q_r < 1 or q_a < 1:
                raise InputError(f"strata counts must be >= 1, got {self.strata}")

    @property
    def resolved_strata(self) -> tuple:
        return self.strata if self.strata is not None else (10, 2 ** min(self.I, 6))


def generate_design(spec: DesignSpec) -> np.ndarray:
    """Inputs in [0, 1]^I.

    The stratified design cycles through ``Q_r`` equal-width radial shells of
    [0, sqrt(I)/2] (the centred radius law with the same mean squared norm
    as the uniform design) and ``Q_a`` random orthant signatures; directions
    are uniform inside the orthant and points are clipped to the cube.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.design == "uniform":
        return rng.random((spec.n, spec.I))
    q_r, q_a = spec.resolved_strata
    signs = rng.choice([-1.0, 1.0], size=(q_a, spec.I))
    i = np.arange(spec.n)
    shell = i % q_r
    stratum = (i // q_r) % q_a
    r_max = 0.5 * np.sqrt(spec.I)
    radius = r_max * (shell + rng.random(spec.n)) / q_r
    g = np.abs(rng.standard_normal((spec.n, spec.I))) * signs[stratum]
    direction = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.clip(radius[:, None] * direction, -0.5, 0.5) + 0.5


def center(X) -> np.ndarray:
    return np.asarray(X, dtype=float) - 0.5


def calibrate_nugget(X_centered, theta: HyperParams, eta: float = DEFAULT_ETA, batch_size: int = 4096) -> float:
    """eta times the average prior variance k_mix(x_i, x_i) over the design."""
    if eta < 0:
        raise InputError(f"eta must be >= 0, got {eta}")
    diag = kernel_diag(X_centered, theta, batch_size=batch_size)
    return float(eta * np.mean(diag))


@dataclass(frozen=True)
class VecchiaConfig:
    n_init: int = 500
    n_neighbors: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n_init < 1 or self.n_neighbors < 1:
            raise InputError("n_init and n_neighbors must be >= 1")


class _KernelSource:
    """Kernel blocks for the Vecchia loop, from a cached matrix when small."""

    def __init__(self, X, theta):
        self.X = X
        self.theta = theta
        self.K = kernel_matrix(X, theta) if X.shape[0] <= _DENSE_CACHE_LIMIT else None

    def block(self, rows, cols):
        if self.K is not None:
            return self.K[np.ix_(rows, cols)]
        return cross_kernel(self.X[rows], self.X[cols], self.theta)


def _nearest_previous(X, i, k, sq):
    if i <= k:
        return np.arange(i)
    d2 = sq[:i] - 2.0 * (X[:i] @ X[i]) + sq[i]
    nn = np.argpartition(d2, k - 1)[:k]
    return np.sort(nn)


def _conditional(src: _KernelSource, i, f, k, sq):
    nn = _nearest_previous(src.X, i, k, sq)
    Knn = src.block(nn, nn)
    kin = src.block(nn, [i])[:, 0]
    kii = src.block([i], [i])[0, 0]
    L, _ = jittered_cholesky(0.5 * (Knn + Knn.T), try_exact=True)
    a = sla.solve_triangular(L, kin, lower=True, check_finite=False)
    b = sla.solve_triangular(L, f[nn], lower=True, check_finite=False)
    return float(a @ b), max(float(kii - a @ a), 0.0)


def vecchia_conditionals(X_centered, theta: HyperParams, cfg: VecchiaConfig, f) -> tuple[np.ndarray, np.ndarray]:
    """Conditional means and variances used for points ``n_init..n-1`` given latent values ``f``."""
    X = _as_design(X_centered)
    f = np.asarray(f, dtype=float)
    src = _KernelSource(X, theta)
    sq = np.einsum("ij,ij->i", X, X)
    n0 = min(X.shape[0], cfg.n_init)
    out = [_conditional(src, i, f, cfg.n_neighbors, sq) for i in range(n0, X.shape[0])]
    if not out:
        return np.empty(0), np.empty(0)
    mean, var = map(np.array, zip(*out))
    return mean, var


def vecchia_sample(X_centered, theta: HyperParams, cfg: VecchiaConfig) -> np.ndarray:
    """One latent draw f ~ GP(0, k_mix) at the rows of ``X_centered``."""
    X = _as_design(X_centered)
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(n)
    src = _KernelSource(X, theta)
    n0 = min(n, cfg.n_init)
    L0, _ = jittered_cholesky(src.block(np.arange(n0), np.arange(n0)), try_exact=True)
    f = np.empty(n)
    f[:n0] = L0 @ z[:n0]
    sq = np.einsum("ij,ij->i", X, X)
    for i in range(n0, n):
        mean, var = _conditional(src, i, f, cfg.n_neighbors, sq)
        f[i] = mean + np.sqrt(var) * z[i]
    return f


@dataclass
class ScenarioDataset:
    X_centered: np.ndarray
    f: np.ndarray
    y: np.ndarray
    sigma_eps2_true: float
    theta_true: HyperParams
    provenance: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        """Write ``x_1..x_I, f, y`` to ``path`` and provenance to ``path.json``."""
        path = Path(path)
        I = self.X_centered.shape[1]
        header = ",".join([f"x_{j + 1}" for j in range(I)] + ["f", "y"])
        data = np.column_stack([self.X_centered, self.f, self.y])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")
        sidecar = dict(self.provenance)
        sidecar["theta_true"] = self.theta_true.to_dict()
        sidecar["sigma_eps2_true"] = self.sigma_eps2_true
        sidecar_path = path.with_suffix(path.suffix + ".json")
        sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return sidecar_path

    @classmethod
    def from_csv(cls, path) -> "ScenarioDataset":
        path = Path(path)
        try:
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read scenario dataset {path}: {exc}") from exc
        return cls(
            X_centered=data[:, :-2],
            f=data[:, -2],
            y=data[:, -1],
            sigma_eps2_true=float(meta["sigma_eps2_true"]),
            theta_true=HyperParams(**meta["theta_true"]),
            provenance={k: v for k, v in meta.items() if k not in ("theta_true", "sigma_eps2_true")},
        )


def scenario_grid(scenario: str, scale: float = 1.0) -> tuple[str, int, int]:
    if scenario not in SCENARIOS:
        raise InputError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    if scale <= 0:
        raise InputError(f"scale must be positive, got {scale}")
    design, I, n = SCENARIOS[scenario]
    return design, I, max(1, int(round(n * scale)))


def make_scenario(scenario: str = "C1", scale: float = 1.0, seed: int = 0, eta: float = DEFAULT_ETA,
                  theta_true: HyperParams | None = None, vecchia: VecchiaConfig | None = None,
                  design: str | None = None, I: int | None = None, n: int | None = None) -> ScenarioDataset:
    """Build one scenario dataset.

    ``scenario="custom"`` takes ``design``, ``I`` and ``n`` explicitly.
    Design, latent process and noise use independent seed streams derived
    from ``seed``.
    """
    if scenario == "custom":
        if design is None or I is None or n is None:
            raise InputError("custom scenarios need design, I and n")
    else:
        design, I, n = scenario_grid(scenario, scale)
    theta_true = theta_true or HyperParams()
    design_seed, f_seed, noise_seed = (
        int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3)
    )
    vecchia = vecchia or VecchiaConfig()
    vecchia = VecchiaConfig(vecchia.n_init, vecchia.n_neighbors, f_seed)
    X = center(generate_design(DesignSpec(n, I, design, design_seed)))
    sigma_eps2 = calibrate_nugget(X, theta_true, eta)
    f = vecchia_sample(X, theta_true, vecchia)
    noise = np.sqrt(sigma_eps2) * np.random.default_rng(noise_seed).standard_normal(n)
    provenance = {
        "scenario": scenario,
        "scale": scale,
        "design": design,
        "I": I,
        "n": n,
        "seed": seed,
        "design_seed": design_seed,
        "f_seed": f_seed,
        "noise_seed": noise_seed,
        "eta": eta,
        "vecchia": asdict(vecchia),
        "exact": n <= vecchia.n_init,
    }
    return ScenarioDataset(X, f, f + noise, sigma_eps2, theta_true, provenance)
