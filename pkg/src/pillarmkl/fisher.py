"""Diagonal-covariance GMM (k-means++ seeded EM) and Fisher-vector encoding
of local-descriptor sets into fixed-length pillar features.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ._accel import njit, pick
from .dataio import FORMAT_VERSION, _read_bytes, _write_bytes, check_magic
from .errors import (
    DegenerateComponent,
    DimMismatch,
    EmptyDescriptorSet,
    InvalidSpec,
    TooFewSamples,
    TruncatedPayload,
)

WEIGHT_FLOOR = 1e-10
VAR_FLOOR_REL = 1e-6
LLOYD_ITERS = 10

_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list = field(default_factory=list)
    converged: bool = True

    @property
    def n_components(self):
        return self.weights.size

    @property
    def dim(self):
        return self.means.shape[1]


# -- per-component log densities (numba / numpy) ------------------------------

@njit
def _log_gauss_numba(X, means, variances):
    T, D = X.shape
    K = means.shape[0]
    out = np.empty((T, K))
    for k in range(K):
        const = 0.0
        for d in range(D):
            const += np.log(variances[k, d])
        const = -0.5 * (D * 1.8378770664093453 + const)
        for t in range(T):
            acc = 0.0
            for d in range(D):
                diff = X[t, d] - means[k, d]
                acc += diff * diff / variances[k, d]
            out[t, k] = const - 0.5 * acc
    return out


def _log_gauss_numpy(X, means, variances):
    const = -0.5 * (X.shape[1] * _LOG2PI + np.log(variances).sum(axis=1))
    diff = X[:, None, :] - means[None, :, :]
    return const[None, :] - 0.5 * np.einsum("tkd,kd->tk", diff * diff, 1.0 / variances)


_log_gauss = pick(_log_gauss_numba, _log_gauss_numpy)


def _posteriors(g_weights, means, variances, X):
    """Responsibilities and per-descriptor log-likelihood."""
    logp = _log_gauss(X, means, variances) + np.log(g_weights)[None, :]
    ll = logsumexp(logp, axis=1)
    return np.exp(logp - ll[:, None]), ll


def posteriors(g: GmmModel, descriptors):
    X = np.asarray(descriptors, dtype=np.float64)
    return _posteriors(g.weights, g.means, g.variances, X)


def average_loglik(g: GmmModel, descriptors) -> float:
    return float(np.mean(posteriors(g, descriptors)[1]))


# -- fitting --------------------------------------------------------------

def _kmeans_pp(X, k, rng):
    T = X.shape[0]
    centers = [X[rng.integers(T)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(T) if total <= 0 else rng.choice(T, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    centers = np.array(centers)
    for _ in range(LLOYD_ITERS):
        dist = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assign = np.argmin(dist, axis=1)
        for c in range(k):
            members = X[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers, assign


def gmm_em(descriptors, k, seed=0, tol=1e-6, max_iter=100) -> GmmModel:
    """Fit a K-component diagonal GMM.

    Variances are floored at 1e-6 times the per-dim data variance. The
    average log-likelihood of every iterate is kept in ``loglik_history``;
    fitting stops once it improves by no more than ``tol``.
    """
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidSpec("descriptors must be a 2-D matrix")
    if k < 1:
        raise InvalidSpec("k must be >= 1")
    T, D = X.shape
    if T < k:
        raise TooFewSamples(f"{T} descriptors for {k} components")
    floor = np.maximum(VAR_FLOOR_REL * X.var(axis=0), 1e-12)

    rng = np.random.default_rng(seed)
    means, assign = _kmeans_pp(X, k, rng)
    weights = np.empty(k)
    variances = np.empty((k, D))
    for c in range(k):
        members = X[assign == c]
        weights[c] = max(len(members) / T, WEIGHT_FLOOR)
        variances[c] = members.var(axis=0) if len(members) > 1 else X.var(axis=0)
    weights /= weights.sum()
    variances = np.maximum(variances, floor)

    history = []
    converged = False
    for _ in range(max_iter + 1):
        gamma, ll = _posteriors(weights, means, variances, X)
        history.append(float(ll.mean()))
        if len(history) > 1 and history[-1] - history[-2] <= tol:
            converged = True
            break
        if len(history) > max_iter:
            break
        nk = gamma.sum(axis=0)
        live = nk > 0
        new_means = means.copy()
        new_vars = variances.copy()
        for c in np.flatnonzero(live):
            new_means[c] = gamma[:, c] @ X / nk[c]
            diff = X - new_means[c]
            new_vars[c] = np.maximum(gamma[:, c] @ (diff * diff) / nk[c], floor)
        new_weights = np.maximum(nk / T, WEIGHT_FLOOR)
        new_weights /= new_weights.sum()
        if not (np.all(np.isfinite(new_means)) and np.all(np.isfinite(new_vars))):
            raise DegenerateComponent("non-finite component parameters after variance flooring")
        weights, means, variances = new_weights, new_means, new_vars
    return GmmModel(weights, means, variances, history, converged)


# -- encoding -------------------------------------------------------------

def _stats(g: GmmModel, X):
    gamma, _ = posteriors(g, X)
    s0 = gamma.sum(axis=0)
    s1 = gamma.T @ X
    s2 = gamma.T @ (X * X)
    return s0, s1, s2


def _check_descriptors(g, descriptors):
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDescriptorSet("no descriptors to encode")
    if X.shape[1] != g.dim:
        raise DimMismatch(f"descriptor dim {X.shape[1]} != GMM dim {g.dim}")
    return X


def loglik_gradients(g: GmmModel, descriptors):
    """Gradient of the average log-likelihood w.r.t. means and std devs."""
    X = _check_descriptors(g, descriptors)
    T = X.shape[0]
    s0, s1, s2 = _stats(g, X)
    mu, var = g.means, g.variances
    sigma = np.sqrt(var)
    d_mu = (s1 - s0[:, None] * mu) / var / T
    centred_sq = s2 - 2.0 * mu * s1 + s0[:, None] * mu * mu
    d_sigma = (centred_sq / (var * sigma) - s0[:, None] / sigma) / T
    return d_mu, d_sigma


def fisher_encode(g: GmmModel, descriptors, normalization="improved") -> np.ndarray:
    """Mean and variance gradient blocks (length 2KD), Fisher-information scaled.

    ``improved`` additionally applies signed square root and L2
    normalisation; an all-zero vector is returned unchanged.
    """
    if normalization not in ("raw", "improved"):
        raise InvalidSpec(f"unknown normalization {normalization!r}")
    X = _check_descriptors(g, descriptors)
    T = X.shape[0]
    s0, s1, s2 = _stats(g, X)
    mu, var = g.means, g.variances
    sigma = np.sqrt(var)
    w = g.weights[:, None]
    mean_block = (s1 - s0[:, None] * mu) / sigma / (T * np.sqrt(w))
    centred_sq = s2 - 2.0 * mu * s1 + s0[:, None] * mu * mu
    var_block = (centred_sq / var - s0[:, None]) / (T * np.sqrt(2.0 * w))
    fv = np.concatenate([mean_block.ravel(), var_block.ravel()])
    if normalization == "improved":
        fv = np.sign(fv) * np.sqrt(np.abs(fv))
        norm = np.linalg.norm(fv)
        if norm > 0:
            fv /= norm
    return fv


def encode_corpus(g: GmmModel, per_sample_descriptors, normalization="improved") -> np.ndarray:
    if len(per_sample_descriptors) == 0:
        raise EmptyDescriptorSet("no samples to encode")
    rows = [fisher_encode(g, d, normalization) for d in per_sample_descriptors]
    return np.vstack(rows).astype(np.float32)


# -- PLGM -----------------------------------------------------------------

def gmm_bytes(g: GmmModel) -> bytes:
    """PLGM: magic, u32 version, u64 K, u64 D, weights, means, variances (f64)."""
    head = b"PLGM" + struct.pack("<IQQ", FORMAT_VERSION, g.n_components, g.dim)
    return head + b"".join(a.astype("<f8").tobytes() for a in (g.weights, g.means, g.variances))


def parse_gmm(buf: bytes, path=None) -> GmmModel:
    check_magic(buf, b"PLGM", path)
    if len(buf) < 24:
        raise TruncatedPayload("header truncated", offset=len(buf), path=path)
    K, D = struct.unpack_from("<QQ", buf, 8)
    need = 24 + 8 * (K + 2 * K * D)
    if len(buf) != need:
        raise TruncatedPayload(f"expected {need} bytes, found {len(buf)}",
                               offset=min(len(buf), need), path=path)
    w = np.frombuffer(buf, "<f8", K, 24).astype(np.float64)
    mu = np.frombuffer(buf, "<f8", K * D, 24 + 8 * K).astype(np.float64).reshape(K, D)
    var = np.frombuffer(buf, "<f8", K * D, 24 + 8 * (K + K * D)).astype(np.float64).reshape(K, D)
    return GmmModel(w, mu, var)


def save_gmm(g: GmmModel, path) -> None:
    _write_bytes(path, gmm_bytes(g))


def load_gmm(path) -> GmmModel:
    return parse_gmm(_read_bytes(path), path)
