"""Multiple kernel learning over precomputed sub-kernels.

Two weightings of ``kappa = sum_k beta_k K_k`` are learnt:

* ``silp_l1`` -- cutting planes on the simplex. Each round trains the
  one-vs-rest SVM on the current kappa, turns its dual points into one cut
  ``sum_k beta_k s_k >= theta`` and re-solves the master LP with
  :func:`pillarmkl.lp.solve_lp`.
* ``l2_mkl`` -- nonnegative unit L2 ball. Alternates SVM training with the
  closed-form weight update ``beta_k ~ q_k^(1/3)`` where ``q_k`` is the
  squared norm of the k-th block of ``w``.

Both share a single beta across all one-vs-rest subproblems.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .dataio import FORMAT_VERSION, _read_bytes, _write_bytes, check_magic, parse_keyvalue
from .errors import AllKernelsInactive, InvalidSpec, KernelMismatch, ShapeMismatch, TruncatedPayload
from .kernels import combine_kernels
from .lp import LpProblem, solve_lp
from .svm import (
    DEFAULT_C,
    DEFAULT_TOL,
    MulticlassSvmModel,
    dual_objective,
    parse_svm_model,
    predict_multiclass,
    svm_model_bytes,
    train_one_vs_rest,
)

DEFAULT_EPS = 1e-3
DEFAULT_MAX_CUTS = 300
DEFAULT_L2_TOL = 1e-5
DEFAULT_L2_MAX_ITER = 100


@dataclass
class TraceEntry:
    iteration: int
    theta: float
    gap: float


@dataclass
class Cut:
    s: np.ndarray
    source: tuple = ()


@dataclass
class MklModel:
    """Learnt kernel weights plus the SVM trained on the fused kernel.

    For ``l1`` the trace ``theta`` is the master-LP lower bound on the fused
    dual objective (summed over classes), so it never decreases. For ``l2``
    it is the fused dual objective itself and ``gap`` is the largest weight
    change of that round.
    """
    beta: np.ndarray
    norm_mode: str
    fused_svm: MulticlassSvmModel
    trace: list = field(default_factory=list)
    kernel_ids: list = field(default_factory=list)
    converged: bool = True

    @property
    def svm_converged(self):
        return self.fused_svm.converged


def sk_objective(alpha, y, k) -> float:
    """``1/2 (a*y)' K (a*y) - sum(a)``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    K = np.asarray(k, dtype=np.float64)
    if alpha.shape != y.shape or K.shape != (alpha.size, alpha.size):
        raise ShapeMismatch(f"alpha {alpha.shape}, y {y.shape}, kernel {K.shape}")
    ay = alpha * y
    return float(0.5 * ay @ K @ ay - alpha.sum())


def _check_kernels(ks, labels):
    if len(ks) == 0:
        raise KernelMismatch("no kernels supplied")
    mats = [np.ascontiguousarray(k, dtype=np.float64) for k in ks]
    n = len(labels)
    for i, m in enumerate(mats):
        if m.shape != (n, n):
            raise KernelMismatch(f"kernel {i} has shape {m.shape}, expected {(n, n)}")
    return mats


def _labels(labels):
    return np.asarray(getattr(labels, "labels", labels), dtype=np.int64)


def _cut(svm: MulticlassSvmModel, mats) -> np.ndarray:
    return np.array([
        sum(sk_objective(m.alpha, m.y, K) for m in svm.per_class) for K in mats
    ])


def _fused_objective(svm: MulticlassSvmModel, kappa) -> float:
    return float(sum(dual_objective(m.alpha, m.y, kappa) for m in svm.per_class))


def _master(cuts, n_kernels):
    """max theta s.t. theta <= beta . s_t for every cut, beta on the simplex."""
    ineq = [(np.concatenate([-s, [1.0]]), 0.0) for s in cuts]
    eq = [(np.concatenate([np.ones(n_kernels), [0.0]]), 1.0)]
    bounds = [(0.0, None)] * n_kernels + [(None, None)]
    sol = solve_lp(LpProblem(np.concatenate([np.zeros(n_kernels), [1.0]]), ineq, eq, bounds))
    if sol.status != "optimal":
        raise RuntimeError(f"master LP returned {sol.status}")
    beta = np.maximum(sol.v[:n_kernels], 0.0)
    return beta / beta.sum(), float(sol.v[-1])


def silp_l1(ks, labels, C=DEFAULT_C, eps=DEFAULT_EPS, max_cuts=DEFAULT_MAX_CUTS,
            tol=DEFAULT_TOL, n_classes=None, kernel_ids=None) -> MklModel:
    """Simplex-constrained MKL by semi-infinite LP cutting planes.

    Stops when ``|1 - beta . s / theta| <= eps`` for the newest dual point,
    or after ``max_cuts`` master solves.
    """
    y = _labels(labels)
    mats = _check_kernels(ks, y)
    n_k = len(mats)
    beta = np.full(n_k, 1.0 / n_k)
    cuts, trace = [], []
    theta = None
    converged = False
    while True:
        svm = train_one_vs_rest(combine_kernels(mats, beta), y, C, tol, n_classes)
        s = _cut(svm, mats)
        if theta is not None:
            value = float(beta @ s)
            gap = abs(1.0 - value / theta) if theta != 0 else abs(value - theta)
            trace.append(TraceEntry(len(cuts), -theta, gap))
            if gap <= eps:
                converged = True
                break
        if len(cuts) >= max_cuts:
            break
        cuts.append(Cut(s, (-1, len(cuts))))
        beta, theta = _master([c.s for c in cuts], n_k)
    return MklModel(beta, "l1", svm, trace, list(kernel_ids or range(n_k)), converged)


def l2_mkl(ks, labels, C=DEFAULT_C, tol=DEFAULT_L2_TOL, max_iter=DEFAULT_L2_MAX_ITER,
           svm_tol=DEFAULT_TOL, n_classes=None, kernel_ids=None) -> MklModel:
    """MKL on the nonnegative unit L2 ball by alternating updates.

    Kernels whose block norm vanishes get weight 0; if every block
    vanishes there is nothing to weight and AllKernelsInactive is raised.
    """
    y = _labels(labels)
    mats = _check_kernels(ks, y)
    n_k = len(mats)
    beta = np.full(n_k, 1.0 / np.sqrt(n_k))
    trace = []
    converged = False
    for it in range(1, max_iter + 1):
        kappa = combine_kernels(mats, beta)
        svm = train_one_vs_rest(kappa, y, C, tol=svm_tol, n_classes=n_classes)
        quad = np.array([
            sum(float(m.coef @ K @ m.coef) for m in svm.per_class) for K in mats
        ])
        q = beta ** 2 * np.maximum(quad, 0.0)
        if not np.any(q > 0):
            raise AllKernelsInactive("every kernel block has zero norm")
        new = np.zeros(n_k)
        active = q > 0
        t = np.cbrt(q[active])
        new[active] = t / np.sqrt(t @ t)
        delta = float(np.max(np.abs(new - beta)))
        trace.append(TraceEntry(it, _fused_objective(svm, kappa), delta))
        beta = new
        if delta <= tol:
            converged = True
            break
    svm = train_one_vs_rest(combine_kernels(mats, beta), y, C, tol=svm_tol, n_classes=n_classes)
    return MklModel(beta, "l2", svm, trace, list(kernel_ids or range(n_k)), converged)


def fit_mkl(ks, labels, norm_mode="l2", C=DEFAULT_C, eps=DEFAULT_EPS, tol=DEFAULT_L2_TOL,
            svm_tol=DEFAULT_TOL, max_cuts=DEFAULT_MAX_CUTS, max_iter=DEFAULT_L2_MAX_ITER,
            n_classes=None, kernel_ids=None) -> MklModel:
    if norm_mode == "l1":
        return silp_l1(ks, labels, C, eps, max_cuts, svm_tol, n_classes, kernel_ids)
    if norm_mode == "l2":
        return l2_mkl(ks, labels, C, tol, max_iter, svm_tol, n_classes, kernel_ids)
    raise InvalidSpec(f"unknown norm mode {norm_mode!r}")


def fused_objective(ks, labels, beta, C=DEFAULT_C, tol=DEFAULT_TOL, n_classes=None) -> float:
    """Summed one-vs-rest dual optimum on ``sum_k beta_k K_k``."""
    kappa = combine_kernels(ks, beta)
    return _fused_objective(train_one_vs_rest(kappa, labels, C, tol, n_classes), kappa)


def mkl_predict(m: MklModel, ks_test_train):
    if len(ks_test_train) != m.beta.size:
        raise ShapeMismatch(f"{len(ks_test_train)} test blocks for {m.beta.size} kernels")
    return predict_multiclass(m.fused_svm, combine_kernels(ks_test_train, m.beta))


# -- PLMK serialisation / trace CSV -------------------------------------------

def mkl_model_bytes(m: MklModel) -> bytes:
    """PLMK: magic, u32 version, u64 header length, key=value header,
    beta (f64), u64 length and the embedded PLSV model."""
    lines = [f"norm_mode={m.norm_mode}", f"n_kernels={m.beta.size}",
             "kernel_ids=" + ",".join(str(k) for k in m.kernel_ids),
             f"converged={int(m.converged)}", f"n_trace={len(m.trace)}"]
    lines += [f"trace.{i}={e.iteration},{float(e.theta).hex()},{float(e.gap).hex()}"
              for i, e in enumerate(m.trace)]
    header = ("\n".join(lines) + "\n").encode()
    svm = svm_model_bytes(m.fused_svm)
    return b"".join([b"PLMK", struct.pack("<IQ", FORMAT_VERSION, len(header)), header,
                     m.beta.astype("<f8").tobytes(), struct.pack("<Q", len(svm)), svm])


def parse_mkl_model(buf: bytes, path=None) -> MklModel:
    check_magic(buf, b"PLMK", path)
    if len(buf) < 16:
        raise TruncatedPayload("header truncated", offset=len(buf), path=path)
    (hlen,) = struct.unpack_from("<Q", buf, 8)
    off = 16 + hlen
    if len(buf) < off:
        raise TruncatedPayload("key=value header truncated", offset=len(buf), path=path)
    meta = parse_keyvalue(buf[16:off].decode())
    n_k = int(meta["n_kernels"])
    if len(buf) < off + 8 * n_k + 8:
        raise TruncatedPayload("beta block truncated", offset=len(buf), path=path)
    beta = np.frombuffer(buf, "<f8", n_k, off).astype(np.float64)
    off += 8 * n_k
    (slen,) = struct.unpack_from("<Q", buf, off)
    off += 8
    if len(buf) != off + slen:
        raise TruncatedPayload("embedded SVM truncated", offset=len(buf), path=path)
    svm = parse_svm_model(buf[off:], path)
    trace = []
    for i in range(int(meta["n_trace"])):
        it, theta, gap = meta[f"trace.{i}"].split(",")
        trace.append(TraceEntry(int(it), float.fromhex(theta), float.fromhex(gap)))
    ids = [s for s in meta["kernel_ids"].split(",")] if meta["kernel_ids"] else []
    return MklModel(beta, meta["norm_mode"], svm, trace, ids, bool(int(meta["converged"])))


def save_mkl_model(m: MklModel, path) -> None:
    _write_bytes(path, mkl_model_bytes(m))


def load_mkl_model(path) -> MklModel:
    return parse_mkl_model(_read_bytes(path), path)


def trace_csv(m: MklModel) -> str:
    rows = ["iteration,theta,gap"]
    rows += [f"{e.iteration},{e.theta!r},{e.gap!r}" for e in m.trace]
    return "\n".join(rows) + "\n"
