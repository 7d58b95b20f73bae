"""Nystrom factorization of the noisy covariance and the algebra built on it.

The approximation used throughout is low-rank plus diagonal,

    K_hat = s I + C W^{-1} C^T,   C = K[:, S],  W = K[S, S] (+ jitter),

with ``s`` the noise variance. With ``L L^T = W`` and ``V = L^{-1} C^T``
(r x n) it becomes ``s I + V^T V``; solves and log-determinants then go
through the r x r matrix ``B = I + V V^T / s``, which has all eigenvalues
>= 1. ``M = s W + C^T C = s L B L^T`` is the matrix named in the formulas,
and its factor is available as :attr:`NystromFactor.chol_M`.

:class:`LiteralNystrom` instead applies the Nystrom formula to the noisy
matrix itself (rank r, pseudo-inverse algebra, dense). It exists for
comparison only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import InputError, NumericError
from .kernels import HyperParams, _as_design, check_interior, cross_kernel, kernel_matrix

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True)
class AnchorSet:
    indices: np.ndarray
    strategy: str = "first"
    seed: int | None = None

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise InputError("anchor set must be a non-empty 1-D index array")
        if np.unique(idx).size != idx.size:
            raise InputError("anchor indices must be distinct")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def r(self) -> int:
        return int(self.indices.size)


def _check_rank(n: int, r: int) -> None:
    if not (1 <= r <= n):
        raise InputError(f"rank must satisfy 1 <= r <= n, got r={r}, n={n}")


def select_anchors_first(n: int, r: int) -> AnchorSet:
    _check_rank(n, r)
    return AnchorSet(np.arange(r), "first", None)


def select_anchors_kmeanspp(X, r: int, seed: int = 0) -> AnchorSet:
    """k-means++ seeding over the rows of X, returning row indices.

    No Lloyd iterations are run. When every unselected row coincides with a
    selected one, the next index is drawn uniformly from the unselected rows.
    """
    X = _as_design(X)
    n = X.shape[0]
    _check_rank(n, r)
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = np.einsum("ij,ij->i", X - X[chosen[0]], X - X[chosen[0]])
    d2[chosen[0]] = 0.0
    free = np.ones(n, dtype=bool)
    free[chosen[0]] = False
    for _ in range(1, r):
        total = d2[free].sum()
        if total > 0.0:
            p = np.where(free, d2, 0.0) / d2[free].sum()
            nxt = int(rng.choice(n, p=p))
        else:
            nxt = int(rng.choice(np.flatnonzero(free)))
        chosen.append(nxt)
        free[nxt] = False
        diff = X - X[nxt]
        d2 = np.minimum(d2, np.einsum("ij,ij->i", diff, diff))
        d2[~free] = 0.0
    return AnchorSet(np.array(chosen), "kmeanspp", seed)


def select_anchors(X, r: int, strategy: str = "first", seed: int = 0) -> AnchorSet:
    if strategy == "first":
        return select_anchors_first(np.asarray(X).shape[0], r)
    if strategy == "kmeanspp":
        return select_anchors_kmeanspp(X, r, seed)
    raise InputError(f"unknown anchor strategy {strategy!r}")


def jittered_cholesky(A: np.ndarray, start: float = JITTER_START, max_rel: float = JITTER_MAX,
                      try_exact: bool = False):
    """Lower Cholesky factor of A + j * mean(diag A) * I with the smallest j on the ladder.

    The ladder starts at ``start`` (after an unjittered attempt when
    ``try_exact``) and grows by 10x up to ``max_rel``. Returns
    ``(L, absolute_jitter)``.
    """
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    ladder = [0.0] if try_exact else []
    rel = start
    while rel <= max_rel * (1 + 1e-9):
        ladder.append(rel * scale)
        rel *= 10.0
    diag = np.diag_indices_from(A)
    for jitter in ladder:
        Aj = A.copy()
        Aj[diag] += jitter
        try:
            L = sla.cholesky(Aj, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, jitter
    raise NumericError(f"Cholesky failed after jitter ladder {ladder}")


@dataclass(frozen=True)
class NystromFactor:
    anchors: AnchorSet
    C: np.ndarray
    W: np.ndarray
    chol_W: np.ndarray
    V: np.ndarray
    chol_B: np.ndarray
    sigma_eps2: float
    jitter_used: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def r(self) -> int:
        return self.C.shape[1]

    @property
    def chol_M(self) -> np.ndarray:
        """Lower factor of M = s W + C^T C."""
        if "chol_M" not in self._cache:
            self._cache["chol_M"] = np.sqrt(self.sigma_eps2) * (self.chol_W @ self.chol_B)
        return self._cache["chol_M"]

    def dense(self) -> np.ndarray:
        """The implied n x n matrix; for tests and small problems only."""
        return self.V.T @ self.V + self.sigma_eps2 * np.eye(self.n)

    def approx_noiseless(self) -> np.ndarray:
        return self.V.T @ self.V


def nystrom_factorize(X, theta: HyperParams, anchors: AnchorSet) -> NystromFactor:
    X = _as_design(X)
    check_interior(theta)
    n = X.shape[0]
    idx = anchors.indices
    if idx.max() >= n or idx.min() < 0:
        raise InputError(f"anchor indices out of range for n={n}")
    C = cross_kernel(X, X[idx], theta)
    W0 = C[idx]
    W0 = 0.5 * (W0 + W0.T)
    L, jitter = jittered_cholesky(W0, try_exact=True)
    W = W0 + jitter * np.eye(len(idx))
    s = theta.sigma_eps2
    V = sla.solve_triangular(L, C.T, lower=True, check_finite=False)
    Bmat = np.eye(len(idx)) + (V @ V.T) / s
    try:
        LB = np.linalg.cholesky(Bmat)
    except np.linalg.LinAlgError as exc:
        raise NumericError("capacitance matrix is not positive definite") from exc
    return NystromFactor(anchors, C, W, L, V, LB, s, jitter)


def lowrank_solve(f: NystromFactor, b) -> np.ndarray:
    """Apply K_hat^{-1} to a vector or to the columns of a matrix."""
    b = np.asarray(b, dtype=float)
    if b.shape[0] != f.n:
        raise InputError(f"right-hand side has {b.shape[0]} rows, factor has n={f.n}")
    s = f.sigma_eps2
    t = sla.cho_solve((f.chol_B, True), f.V @ b, check_finite=False)
    return (b - f.V.T @ t / s) / s


def lowrank_logdet(f: NystromFactor) -> float:
    """log det K_hat = n log s + log det B = (n - r) log s + log det M - log det W."""
    return float(f.n * np.log(f.sigma_eps2) + 2.0 * np.sum(np.log(np.diag(f.chol_B))))


def frobenius_error(K: np.ndarray, f: NystromFactor) -> float:
    """||K - C W^{-1} C^T||_F for the noiseless kernel matrix K."""
    return float(np.linalg.norm(K - f.approx_noiseless()))


class LiteralNystrom:
    """Nystrom formula applied to K + s I directly (rank r, singular for r < n).

    Solves use the Moore-Penrose pseudo-inverse and the log-determinant is the
    log pseudo-determinant over the r nonzero eigenvalues. Dense O(n^2 r).
    """

    def __init__(self, X, theta: HyperParams, anchors: AnchorSet):
        X = _as_design(X)
        check_interior(theta)
        idx = anchors.indices
        Kt = kernel_matrix(X, theta)
        Kt[np.diag_indices_from(Kt)] += theta.sigma_eps2
        Cn = Kt[:, idx]
        Ln = np.linalg.cholesky(Cn[idx])
        G = sla.solve_triangular(Ln, Cn.T, lower=True)
        self.anchors = anchors
        self.matrix = G.T @ G
        evals, evecs = np.linalg.eigh(self.matrix)
        keep = evals > evals.max() * max(Kt.shape) * np.finfo(float).eps
        self._evals = evals[keep]
        self._evecs = evecs[:, keep]

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return self._evecs @ ((self._evecs.T @ b) / (self._evals if b.ndim == 1 else self._evals[:, None]))

    def logdet(self) -> float:
        return float(np.sum(np.log(self._evals)))
