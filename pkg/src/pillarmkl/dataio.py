"""Feature/kernel matrix files, label and split text files, synthetic pillars.

Binary layouts (all little-endian)::

    PLRF  magic(4) version:u32 n_samples:u64 n_dims:u64  float32[n*d] row-major
    PLRK  magic(4) version:u32 n:u64                     float64[n*n] row-major

Labels are one integer per line; splits are ``<index>,<train|test>`` lines.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    DuplicateIndex,
    IndexOutOfRange,
    InvalidSpec,
    IoFailure,
    NegativeLabel,
    NonFiniteValue,
    ParseError,
    TruncatedPayload,
    UnknownRole,
    UnsupportedVersion,
)

FORMAT_VERSION = 1

_PLRF = struct.Struct("<4sIQQ")
_PLRK = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray
    n_classes: int

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, idx):
        return self.labels[idx]


@dataclass(frozen=True)
class SplitDefinition:
    split_id: int
    train_indices: np.ndarray
    test_indices: np.ndarray


@dataclass(frozen=True)
class PillarSpec:
    """One synthetic pillar: dimensionality, classes it separates, noise level."""
    n_dims: int
    informative_classes: tuple
    noise_sigma: float = 1.0


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int
    n_classes: int
    pillars: tuple = field(default_factory=tuple)
    seed: int = 0
    separation: float = 3.0


# -- binary helpers ---------------------------------------------------------

def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _write_bytes(path, data: bytes) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def check_magic(buf: bytes, magic: bytes, path=None) -> None:
    """Validate the 4-byte magic and the u32 version that follows it."""
    if len(buf) < 4:
        raise TruncatedPayload("file shorter than magic", offset=len(buf), path=path)
    if buf[:4] != magic:
        raise BadMagic(f"expected magic {magic!r}, found {buf[:4]!r}", offset=0, path=path)
    if len(buf) < 8:
        raise TruncatedPayload("file shorter than version field", offset=len(buf), path=path)
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"version {version} not supported", offset=4, path=path)


def _payload(buf, offset, count, dtype, path):
    itemsize = np.dtype(dtype).itemsize
    need = offset + count * itemsize
    if len(buf) < need:
        raise TruncatedPayload(
            f"payload needs {need} bytes, file has {len(buf)}", offset=len(buf), path=path)
    if len(buf) > need:
        raise TruncatedPayload(
            f"{len(buf) - need} trailing bytes after payload", offset=need, path=path)
    arr = np.frombuffer(buf, dtype=np.dtype(dtype).newbyteorder("<"), count=count, offset=offset)
    bad = np.flatnonzero(~np.isfinite(arr))
    if bad.size:
        raise NonFiniteValue("non-finite value", offset=offset + int(bad[0]) * itemsize, path=path)
    return arr.astype(dtype, copy=True)


def as_feature_matrix(x) -> np.ndarray:
    """Coerce to a C-contiguous float32 2-D array, enforcing the invariants."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise InvalidSpec(f"feature matrix must be 2-D and non-empty, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("feature matrix contains NaN/Inf")
    return x


# -- PLRF -------------------------------------------------------------------

def feature_matrix_bytes(m) -> bytes:
    m = as_feature_matrix(m)
    header = _PLRF.pack(b"PLRF", FORMAT_VERSION, m.shape[0], m.shape[1])
    return header + m.astype("<f4").tobytes()


def write_feature_matrix(m, path) -> None:
    _write_bytes(path, feature_matrix_bytes(m))


def parse_feature_matrix(buf: bytes, path=None) -> np.ndarray:
    check_magic(buf, b"PLRF", path)
    if len(buf) < _PLRF.size:
        raise TruncatedPayload("header truncated", offset=len(buf), path=path)
    _, _, n, d = _PLRF.unpack_from(buf)
    if n < 1 or d < 1:
        raise InvalidSpec(f"empty feature matrix declared ({n}x{d}) in {path}")
    return _payload(buf, _PLRF.size, n * d, np.float32, path).reshape(n, d)


def load_feature_matrix(path) -> np.ndarray:
    return parse_feature_matrix(_read_bytes(path), path)


# -- PLRK -------------------------------------------------------------------

def write_kernel_matrix(k, path, provenance: dict | None = None) -> None:
    """Write a PLRK cache; ``provenance`` goes to a ``<path>.meta`` sidecar."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise InvalidSpec(f"kernel must be square, got {k.shape}")
    header = _PLRK.pack(b"PLRK", FORMAT_VERSION, k.shape[0])
    _write_bytes(path, header + np.ascontiguousarray(k).astype("<f8").tobytes())
    if provenance is not None:
        text = "".join(f"{key}={value}\n" for key, value in provenance.items())
        _write_bytes(str(path) + ".meta", text.encode())


def parse_kernel_matrix(buf: bytes, path=None) -> np.ndarray:
    check_magic(buf, b"PLRK", path)
    if len(buf) < _PLRK.size:
        raise TruncatedPayload("header truncated", offset=len(buf), path=path)
    _, _, n = _PLRK.unpack_from(buf)
    return _payload(buf, _PLRK.size, n * n, np.float64, path).reshape(n, n)


def load_kernel_matrix(path) -> np.ndarray:
    return parse_kernel_matrix(_read_bytes(path), path)


def load_provenance(path) -> dict:
    meta = str(path) + ".meta"
    if not os.path.exists(meta):
        return {}
    return parse_keyvalue(_read_bytes(meta).decode())


def parse_keyvalue(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", lineno)
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# -- labels / splits --------------------------------------------------------

def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def parse_labels(text: str) -> LabelVector:
    labels = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, 1):
        try:
            value = int(raw.strip())
        except ValueError:
            raise ParseError(f"not an integer: {raw!r}", lineno) from None
        if value < 0:
            raise NegativeLabel(f"negative label {value}", lineno)
        labels.append(value)
    if not labels:
        raise ParseError("no labels", 1)
    arr = np.asarray(labels, dtype=np.int64)
    return LabelVector(arr, int(arr.max()) + 1)


def load_labels(path) -> LabelVector:
    return parse_labels(_read_text(path))


def write_labels(labels, path) -> None:
    labels = np.asarray(getattr(labels, "labels", labels))
    _write_bytes(path, "".join(f"{int(v)}\n" for v in labels).encode())


def parse_split(text: str, n_samples: int | None = None, split_id: int = 0) -> SplitDefinition:
    train, test, seen = [], [], set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected '<index>,<role>', got {line!r}", lineno)
        try:
            idx = int(parts[0])
        except ValueError:
            raise ParseError(f"bad index {parts[0]!r}", lineno) from None
        role = parts[1].strip()
        if role not in ("train", "test"):
            raise UnknownRole(f"unknown role {role!r}", lineno)
        if idx < 0 or (n_samples is not None and idx >= n_samples):
            raise IndexOutOfRange(f"index {idx} outside [0, {n_samples})", lineno)
        if idx in seen:
            raise DuplicateIndex(f"index {idx} listed twice", lineno)
        seen.add(idx)
        (train if role == "train" else test).append(idx)
    return SplitDefinition(split_id, np.asarray(train, dtype=np.int64),
                           np.asarray(test, dtype=np.int64))


def load_split(path, n_samples: int | None = None, split_id: int = 0) -> SplitDefinition:
    return parse_split(_read_text(path), n_samples, split_id)


def write_split(split: SplitDefinition, path) -> None:
    rows = [(int(i), "train") for i in split.train_indices]
    rows += [(int(i), "test") for i in split.test_indices]
    rows.sort()
    _write_bytes(path, "".join(f"{i},{role}\n" for i, role in rows).encode())


def validate_split(split: SplitDefinition, labels: LabelVector) -> None:
    n = len(labels)
    for idx in (split.train_indices, split.test_indices):
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexOutOfRange(f"split {split.split_id} references rows outside [0, {n})", 0)
    if np.intersect1d(split.train_indices, split.test_indices).size:
        raise InvalidSpec(f"split {split.split_id}: train and test overlap")
    if np.unique(labels.labels[split.train_indices]).size < 2:
        raise InvalidSpec(f"split {split.split_id}: training rows contain fewer than 2 classes")


def l2_normalize_rows(x) -> np.ndarray:
    """Row-wise L2 normalisation; zero rows are left at zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return (x / np.where(norms > 0, norms, 1.0)).astype(np.float32)


# -- synthetic pillars ------------------------------------------------------

def _check_spec(spec: SyntheticSpec) -> None:
    if spec.n_classes < 2:
        raise InvalidSpec("n_classes must be >= 2")
    if spec.n_samples < 2 * spec.n_classes:
        raise InvalidSpec("n_samples must be at least 2 per class")
    if not spec.pillars:
        raise InvalidSpec("at least one pillar is required")
    covered = set()
    for p, pillar in enumerate(spec.pillars):
        if pillar.n_dims < 1:
            raise InvalidSpec(f"pillar {p}: n_dims must be >= 1")
        if pillar.noise_sigma < 0:
            raise InvalidSpec(f"pillar {p}: noise_sigma must be >= 0")
        subset = set(pillar.informative_classes)
        if not subset:
            raise InvalidSpec(f"pillar {p}: informative class subset is empty")
        if not subset <= set(range(spec.n_classes)):
            raise InvalidSpec(f"pillar {p}: informative classes outside [0, {spec.n_classes})")
        covered |= subset
    if covered != set(range(spec.n_classes)):
        raise InvalidSpec(f"classes {sorted(set(range(spec.n_classes)) - covered)} "
                          "are not informative in any pillar")


def stratified_splits(labels: np.ndarray, n_splits: int, rng, train_fraction=0.7):
    """Per class: floor(fraction * count) shuffled rows to train, the rest to test."""
    splits = []
    for s in range(n_splits):
        train = []
        for c in np.unique(labels):
            rows = np.flatnonzero(labels == c)
            rows = rows[rng.permutation(rows.size)]
            train.extend(rows[: int(np.floor(train_fraction * rows.size))])
        train = np.sort(np.asarray(train, dtype=np.int64))
        test = np.setdiff1d(np.arange(labels.size), train)
        splits.append(SplitDefinition(s + 1, train, test.astype(np.int64)))
    return splits


def generate_synthetic_pillars(spec: SyntheticSpec):
    """Seeded multi-pillar dataset.

    Every pillar draws isotropic noise; on its first ``ceil(d/2)`` dims each
    informative class gets its own mean offset while all other classes share
    the zero mean, so a pillar can only tell its informative classes apart.

    Returns ``(pillars, labels, splits)`` with three stratified 70/30 splits.
    """
    _check_spec(spec)
    rng = np.random.default_rng(spec.seed)
    labels = np.arange(spec.n_samples, dtype=np.int64) % spec.n_classes
    labels = labels[rng.permutation(spec.n_samples)]
    pillars = []
    for pillar in spec.pillars:
        n_inf = (pillar.n_dims + 1) // 2
        means = np.zeros((spec.n_classes, pillar.n_dims))
        for c in sorted(pillar.informative_classes):
            direction = rng.standard_normal(n_inf)
            means[c, :n_inf] = spec.separation * direction / np.linalg.norm(direction)
        noise = rng.standard_normal((spec.n_samples, pillar.n_dims))
        pillars.append((means[labels] + pillar.noise_sigma * noise).astype(np.float32))
    splits = stratified_splits(labels, 3, rng)
    return pillars, LabelVector(labels, spec.n_classes), splits


def default_subsets(n_classes: int, n_pillars: int) -> list:
    """Round-robin class subsets: pillar p is informative for classes c with c % P == p."""
    if n_pillars >= n_classes:
        return [tuple([p % n_classes]) for p in range(n_pillars)]
    return [tuple(c for c in range(n_classes) if c % n_pillars == p) for p in range(n_pillars)]


def complementary_spec(n_samples=400, n_classes=4, n_dims=16, noise_sigma=1.0,
                       seed=0, separation=3.0) -> SyntheticSpec:
    """Four pillars as two "networks" times two "views".

    Pillars 0/1 (network A) split the classes into low/high halves and pillars
    2/3 (network B) into even/odd ids, so each pillar confuses half of the
    classes while either network's pair covers all of them.
    """
    half = n_classes // 2
    subsets = [
        tuple(range(half)),
        tuple(range(half, n_classes)),
        tuple(range(0, n_classes, 2)),
        tuple(range(1, n_classes, 2)),
    ]
    return SyntheticSpec(
        n_samples=n_samples,
        n_classes=n_classes,
        pillars=tuple(PillarSpec(n_dims, s, noise_sigma) for s in subsets),
        seed=seed,
        separation=separation,
    )


def write_fixture(out_dir, pillars: Sequence[np.ndarray], labels: LabelVector,
                  splits: Sequence[SplitDefinition], groups=None, seed=0, norm="l2",
                  mode="staged") -> Path:
    """Write a synthetic tree (PLRF pillars, labels, splits, plan) and return the plan path."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    lines = [f"seed={seed}", "svm.C=100", "svm.tol=0.001", "mkl.eps=0.001",
             "mkl.tol=1e-05", f"fusion.mode={mode}", f"fusion.norm={norm}",
             "labels=labels.txt",
             "splits=" + ",".join(f"split{s.split_id}.txt" for s in splits)]
    for p, x in enumerate(pillars):
        write_feature_matrix(x, out / f"pillar{p}.plrf")
        group = groups[p] if groups is not None else f"g{p}"
        lines += [f"pillar.p{p}.features=pillar{p}.plrf", f"pillar.p{p}.kernel=rbf",
                  f"pillar.p{p}.gamma=scale", f"pillar.p{p}.normalization=unit_mean_diag",
                  f"pillar.p{p}.group={group}"]
    write_labels(labels, out / "labels.txt")
    for s in splits:
        write_split(s, out / f"split{s.split_id}.txt")
    plan = out / "plan.txt"
    _write_bytes(plan, ("\n".join(lines) + "\n").encode())
    return plan
