"""Soft-margin C-SVM over a precomputed kernel.

The dual ``max sum(a) - 1/2 a'YKYa`` s.t. ``0 <= a <= C``, ``y'a = 0`` is
solved by SMO with maximal-violating-pair working set selection. The
primal ``w`` and slacks are never materialised; ``decision_values`` and
``duality_gap`` expand them through the kernel.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ._accel import njit, pick
from .dataio import FORMAT_VERSION, _read_bytes, _write_bytes, check_magic, parse_keyvalue
from .errors import (
    EmptyClass,
    InvalidSpec,
    ShapeMismatch,
    SingleClass,
    TruncatedPayload,
)
from .kernels import check_psd

DEFAULT_C = 100.0
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 10_000_000
_TAU = 1e-12


@dataclass
class BinarySvmModel:
    alpha: np.ndarray
    y: np.ndarray
    b: float
    C: float
    tol: float = DEFAULT_TOL
    converged: bool = True
    n_iter: int = 0
    train_index_map: np.ndarray | None = None

    def __post_init__(self):
        if self.train_index_map is None:
            self.train_index_map = np.arange(len(self.alpha), dtype=np.int64)

    @property
    def support_indices(self):
        return np.flatnonzero(self.alpha > 0)

    @property
    def coef(self):
        return self.alpha * self.y


@dataclass
class MulticlassSvmModel:
    per_class: list = field(default_factory=list)
    n_classes: int = 0

    @property
    def converged(self):
        return all(m.converged for m in self.per_class)


# -- SMO inner loop (numba / numpy) -----------------------------------------

@njit
def _smo_numba(K, y, C, tol, max_iter):
    n = K.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    converged = False
    while it < max_iter:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                if v < gmin:
                    gmin = v
                    j = t
        if i < 0 or j < 0 or gmax - gmin <= tol:
            converged = True
            break
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = _TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] = ai + delta
            alpha[j] = aj + delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = _TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            alpha[i] = ai - delta
            alpha[j] = aj + delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        di = (alpha[i] - ai) * y[i]
        dj = (alpha[j] - aj) * y[j]
        for t in range(n):
            G[t] += y[t] * (K[t, i] * di + K[t, j] * dj)
        it += 1
    return alpha, G, it, converged


def _clip_pair(ai, aj, yi, yj, delta_raw, C):
    """Pair update with box clipping; mirrors the compiled branch logic."""
    if yi != yj:
        diff = ai - aj
        ni, nj = ai + delta_raw, aj + delta_raw
        if diff > 0:
            if nj < 0:
                nj, ni = 0.0, diff
        elif ni < 0:
            ni, nj = 0.0, -diff
        if diff > 0:
            if ni > C:
                ni, nj = C, C - diff
        elif nj > C:
            nj, ni = C, C + diff
    else:
        s = ai + aj
        ni, nj = ai - delta_raw, aj + delta_raw
        if s > C:
            if ni > C:
                ni, nj = C, s - C
        elif nj < 0:
            nj, ni = 0.0, s
        if s > C:
            if nj > C:
                nj, ni = C, s - C
        elif ni < 0:
            ni, nj = 0.0, s
    return ni, nj


def _smo_numpy(K, y, C, tol, max_iter):
    n = K.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    pos = y > 0
    it = 0
    converged = False
    while it < max_iter:
        v = -y * G
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        j = int(np.argmin(np.where(low, v, np.inf)))
        if v[i] - v[j] <= tol:
            converged = True
            break
        ai, aj = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = _TAU
        delta = ((-G[i] - G[j]) if y[i] != y[j] else (G[i] - G[j])) / quad
        alpha[i], alpha[j] = _clip_pair(ai, aj, y[i], y[j], delta, C)
        di = (alpha[i] - ai) * y[i]
        dj = (alpha[j] - aj) * y[j]
        G += y * (K[:, i] * di + K[:, j] * dj)
        it += 1
    return alpha, G, it, converged


_smo = pick(_smo_numba, _smo_numpy)


def _bias(alpha, y, f0, C):
    r = y - f0
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(np.mean(r[free]))
    at_zero, at_c = alpha <= 0, alpha >= C
    lower = r[(at_zero & (y > 0)) | (at_c & (y < 0))]
    upper = r[(at_zero & (y < 0)) | (at_c & (y > 0))]
    if lower.size and upper.size:
        return 0.5 * (lower.max() + upper.min())
    if lower.size:
        return float(lower.max())
    if upper.size:
        return float(upper.min())
    return 0.0


def _as_signs(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 1.0) | (y == -1.0)):
        raise InvalidSpec("binary labels must be +1/-1")
    return y


def smo_train(k, y, C=DEFAULT_C, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
              index_map=None, check_kernel=True, solver=None) -> BinarySvmModel:
    """Train a binary SVM on a precomputed train/train kernel.

    Stops once the maximal KKT violation ``m(a) - M(a)`` drops to ``tol``.
    Hitting ``max_iter`` returns the last (best) iterate with
    ``converged=False`` instead of raising.
    """
    K = np.ascontiguousarray(k, dtype=np.float64)
    y = _as_signs(y)
    if K.ndim != 2 or K.shape != (y.size, y.size):
        raise ShapeMismatch(f"kernel {K.shape} does not match {y.size} labels")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClass("training labels contain a single class")
    if not (C > 0 and tol > 0):
        raise InvalidSpec("C and tol must be positive")
    if check_kernel:
        psd = check_psd(K)
        if not psd:
            raise InvalidSpec(f"kernel is not PSD (min eigenvalue {psd.min_eigenvalue:.3g})")
    alpha, _, n_iter, converged = (solver or _smo)(K, y, float(C), float(tol), int(max_iter))
    np.clip(alpha, 0.0, C, out=alpha)
    f0 = K @ (alpha * y)
    b = _bias(alpha, y, f0, C)
    return BinarySvmModel(alpha, y, b, float(C), float(tol), bool(converged), int(n_iter),
                          None if index_map is None else np.asarray(index_map, dtype=np.int64))


def decision_values(m: BinarySvmModel, k_test_train) -> np.ndarray:
    """``f(x) = sum_i a_i y_i k(x_i, x) + b`` for each row of the test/train block."""
    kt = np.asarray(k_test_train, dtype=np.float64)
    if kt.ndim != 2 or kt.shape[1] != m.alpha.size:
        raise ShapeMismatch(f"test/train block {kt.shape} vs {m.alpha.size} training rows")
    return kt @ m.coef + m.b


def dual_objective(alpha, y, k) -> float:
    ay = np.asarray(alpha) * np.asarray(y)
    return float(np.sum(alpha) - 0.5 * ay @ np.asarray(k) @ ay)


def duality_gap(m: BinarySvmModel, k, y=None, C=None) -> float:
    """Primal minus dual value, with slacks ``max(0, 1 - y f(x))``."""
    K = np.asarray(k, dtype=np.float64)
    y = m.y if y is None else _as_signs(y)
    C = m.C if C is None else C
    if K.shape != (m.alpha.size, m.alpha.size) or y.size != m.alpha.size:
        raise ShapeMismatch(f"kernel {K.shape} vs model of size {m.alpha.size}")
    ay = m.alpha * y
    Kay = K @ ay
    wsq = float(ay @ Kay)
    slack = np.maximum(0.0, 1.0 - y * (Kay + m.b))
    primal = 0.5 * wsq + C * float(slack.sum())
    dual = float(m.alpha.sum()) - 0.5 * wsq
    return primal - dual


def train_one_vs_rest(k, labels, C=DEFAULT_C, tol=DEFAULT_TOL, n_classes=None,
                      max_iter=DEFAULT_MAX_ITER, index_map=None) -> MulticlassSvmModel:
    """One binary SVM per class (class vs rest) over a shared kernel."""
    labels = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    K = np.ascontiguousarray(k, dtype=np.float64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise SingleClass("one-vs-rest needs at least 2 classes")
    for c in range(n_classes):
        if not np.any(labels == c):
            raise EmptyClass(c)
    psd = check_psd(K)
    if not psd:
        raise InvalidSpec(f"kernel is not PSD (min eigenvalue {psd.min_eigenvalue:.3g})")
    per_class = [
        smo_train(K, np.where(labels == c, 1.0, -1.0), C, tol, max_iter, index_map,
                  check_kernel=False)
        for c in range(n_classes)
    ]
    return MulticlassSvmModel(per_class, n_classes)


def predict_multiclass(m: MulticlassSvmModel, k_test_train):
    """Argmax of per-class decision values; ties go to the lowest class id."""
    scores = np.column_stack([decision_values(b, k_test_train) for b in m.per_class])
    return np.argmax(scores, axis=1), scores


# -- PLSV serialisation -----------------------------------------------------

def _fhex(v):
    return float(v).hex()


def svm_model_bytes(model) -> bytes:
    """PLSV: magic, u32 version, u64 header length, key=value header, then
    per model ``alpha`` (f64) and ``y`` (i8), then the shared index map (i64)."""
    if isinstance(model, BinarySvmModel):
        kind, models, n_classes = "binary", [model], 0
    else:
        kind, models, n_classes = "ovr", model.per_class, model.n_classes
    n = models[0].alpha.size
    lines = [f"kind={kind}", f"n={n}", f"n_models={len(models)}", f"n_classes={n_classes}"]
    for i, m in enumerate(models):
        lines += [f"model.{i}.C={_fhex(m.C)}", f"model.{i}.tol={_fhex(m.tol)}",
                  f"model.{i}.b={_fhex(m.b)}", f"model.{i}.converged={int(m.converged)}",
                  f"model.{i}.n_iter={m.n_iter}"]
    header = ("\n".join(lines) + "\n").encode()
    parts = [b"PLSV", struct.pack("<IQ", FORMAT_VERSION, len(header)), header]
    for m in models:
        parts.append(m.alpha.astype("<f8").tobytes())
        parts.append(m.y.astype("<i1").tobytes())
    parts.append(np.asarray(models[0].train_index_map).astype("<i8").tobytes())
    return b"".join(parts)


def parse_svm_model(buf: bytes, path=None):
    check_magic(buf, b"PLSV", path)
    if len(buf) < 16:
        raise TruncatedPayload("header truncated", offset=len(buf), path=path)
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    if len(buf) < 16 + hlen:
        raise TruncatedPayload("key=value header truncated", offset=len(buf), path=path)
    meta = parse_keyvalue(buf[16:16 + hlen].decode())
    n, n_models = int(meta["n"]), int(meta["n_models"])
    off = 16 + hlen
    need = off + n_models * n * 9 + n * 8
    if len(buf) != need:
        raise TruncatedPayload(f"expected {need} bytes, found {len(buf)}",
                               offset=min(len(buf), need), path=path)
    arrays = []
    for _ in range(n_models):
        alpha = np.frombuffer(buf, "<f8", n, off).astype(np.float64)
        off += 8 * n
        y = np.frombuffer(buf, "<i1", n, off).astype(np.float64)
        off += n
        arrays.append((alpha, y))
    index_map = np.frombuffer(buf, "<i8", n, off).astype(np.int64)
    models = [
        BinarySvmModel(alpha, y, float.fromhex(meta[f"model.{i}.b"]),
                       float.fromhex(meta[f"model.{i}.C"]), float.fromhex(meta[f"model.{i}.tol"]),
                       bool(int(meta[f"model.{i}.converged"])), int(meta[f"model.{i}.n_iter"]),
                       index_map.copy())
        for i, (alpha, y) in enumerate(arrays)
    ]
    if meta["kind"] == "binary":
        return models[0]
    return MulticlassSvmModel(models, int(meta["n_classes"]))


def save_svm_model(model, path) -> None:
    _write_bytes(path, svm_model_bytes(model))


def load_svm_model(path):
    return parse_svm_model(_read_bytes(path), path)
