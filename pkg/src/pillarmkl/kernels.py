"""Gram matrices, bandwidth heuristics, normalisation, PSD checks and
weighted kernel combination.

Kernels are float64 throughout; features stay float32 until they get here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from ._accel import njit, pick
from .errors import (
    DegenerateDiagonal,
    DimensionMismatch,
    InvalidSpec,
    NegativeWeight,
    SizeMismatch,
    ZeroVariance,
)

PSD_TOL = 1e-8
JITTER_LADDER = (1e-12, 1e-10, 1e-8)


@dataclass(frozen=True)
class KernelParams:
    kind: str = "rbf"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("rbf", "linear"):
            raise InvalidSpec(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf" and not (self.gamma is not None and self.gamma > 0):
            raise InvalidSpec(f"rbf kernel needs gamma > 0, got {self.gamma!r}")


@dataclass(frozen=True)
class KernelMatrix:
    """Square float64 Gram matrix plus a free-form provenance record."""
    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def n(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class PsdResult:
    ok: bool
    min_eigenvalue: float | None = None

    def __bool__(self):
        return self.ok


# -- Gram kernels (numba / numpy) -------------------------------------------

@njit(fastmath=False)
def _sqdist_numba(x, z, symmetric):
    n, m, d = x.shape[0], z.shape[0], x.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        start = i if symmetric else 0
        for j in range(start, m):
            acc = 0.0
            for t in range(d):
                diff = x[i, t] - z[j, t]
                acc += diff * diff
            out[i, j] = acc
            if symmetric:
                out[j, i] = acc
    return out


def _sqdist_numpy(x, z, symmetric):
    xx = np.einsum("ij,ij->i", x, x)
    zz = np.einsum("ij,ij->i", z, z)
    out = xx[:, None] + zz[None, :] - 2.0 * (x @ z.T)
    np.maximum(out, 0.0, out=out)
    if symmetric:
        out = np.triu(out, 1)
        out = out + out.T
    return out


_sqdist = pick(_sqdist_numba, _sqdist_numpy)


def kernel_gram(x, z, params: KernelParams, sqdist=None) -> np.ndarray:
    """Cross Gram matrix ``k(x_i, z_j)``.

    Passing the same object for ``x`` and ``z`` yields an exactly symmetric
    matrix (one triangle is mirrored); RBF diagonals are then exactly 1.
    """
    symmetric = x is z
    x = np.ascontiguousarray(x, dtype=np.float64)
    z = x if symmetric else np.ascontiguousarray(z, dtype=np.float64)
    if x.ndim != 2 or z.ndim != 2 or x.shape[1] != z.shape[1]:
        raise DimensionMismatch(f"cannot pair shapes {x.shape} and {z.shape}")
    if params.kind == "linear":
        k = x @ z.T
        if symmetric:
            k = np.triu(k) + np.triu(k, 1).T
        return k
    d2 = (sqdist or _sqdist)(x, z, symmetric)
    k = np.exp(-params.gamma * d2)
    if symmetric:
        np.fill_diagonal(k, 1.0)
    return k


def gram_matrix(x, params: KernelParams, pillar_id=None) -> KernelMatrix:
    values = kernel_gram(x, x, params)
    return KernelMatrix(values, {"kind": params.kind, "gamma": params.gamma,
                                 "pillar": pillar_id, "normalization": "none", "scale": 1.0})


def gamma_heuristic(x, mode: str = "scale", seed: int = 0, max_rows: int = 2000) -> float:
    """RBF bandwidth guess.

    ``scale``: 1 / (d * var(x)) over all entries. ``median``: 1 / (2 m^2)
    with m the median pairwise distance over at most ``max_rows`` rows.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InvalidSpec("gamma heuristic needs at least 2 samples")
    if mode == "scale":
        var = x.var()
        if var <= 0:
            raise ZeroVariance("all feature entries are identical")
        return 1.0 / (x.shape[1] * var)
    if mode == "median":
        if x.shape[0] > max_rows:
            rows = np.random.default_rng(seed).choice(x.shape[0], max_rows, replace=False)
            x = x[np.sort(rows)]
        m = np.median(pdist(x))
        if m <= 0:
            raise ZeroVariance("median pairwise distance is zero")
        return 1.0 / (2.0 * m * m)
    raise InvalidSpec(f"unknown gamma mode {mode!r}")


def normalize_kernel(k, mode: str = "unit_mean_diag"):
    """Return ``(normalised, scale)`` where ``normalised = k / scale``.

    The scale has to be applied to test/train blocks as well, so callers get
    it back rather than just the matrix.
    """
    values = np.asarray(k, dtype=np.float64)
    if mode == "none":
        return values, 1.0
    if mode != "unit_mean_diag":
        raise InvalidSpec(f"unknown normalization {mode!r}")
    scale = float(np.mean(np.diag(values)))
    if not scale > 0:
        raise DegenerateDiagonal(f"mean diagonal is {scale}")
    return values / scale, scale


def normalize_kernel_matrix(k: KernelMatrix, mode="unit_mean_diag") -> KernelMatrix:
    values, scale = normalize_kernel(k, mode)
    prov = dict(k.provenance)
    prov["normalization"] = mode
    prov["scale"] = prov.get("scale", 1.0) * scale
    return KernelMatrix(values, prov)


def check_psd(k, tol: float = PSD_TOL) -> PsdResult:
    """Cholesky with a small diagonal jitter ladder, capped at ``tol``."""
    values = np.asarray(k, dtype=np.float64)
    ref = max(1.0, float(np.max(np.diag(values)))) if values.size else 1.0
    eye = np.eye(values.shape[0])
    for jitter in [j for j in JITTER_LADDER if j < tol] + [tol]:
        try:
            np.linalg.cholesky(values + jitter * ref * eye)
            return PsdResult(True)
        except np.linalg.LinAlgError:
            continue
    return PsdResult(False, float(np.linalg.eigvalsh(values)[0]))


def combine_kernels(ks, beta) -> np.ndarray:
    """Weighted sum ``sum_k beta_k K_k`` with nonnegative weights."""
    beta = np.asarray(beta, dtype=np.float64)
    if len(ks) == 0 or beta.shape != (len(ks),):
        raise SizeMismatch(f"{len(ks)} kernels but {beta.size} weights")
    if np.any(beta < 0):
        raise NegativeWeight(f"negative kernel weight in {beta.tolist()}")
    mats = [np.asarray(k, dtype=np.float64) for k in ks]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise SizeMismatch(f"kernel shapes differ: {[m.shape for m in mats]}")
    out = np.zeros(shape)
    for b, m in zip(beta, mats):
        if b != 0.0:
            out += b * m
    return out


def combine_kernel_matrices(ks, beta) -> KernelMatrix:
    values = combine_kernels(ks, beta)
    prov = {"kind": "combined", "beta": [float(b) for b in beta],
            "sources": [getattr(k, "provenance", {}).get("pillar") for k in ks]}
    return KernelMatrix(values, prov)
