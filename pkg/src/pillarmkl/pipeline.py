"""Three-split evaluation of per-pillar SVMs, per-group MKL and global fusion.

A plan names the pillars (feature file, kernel, bandwidth, normalisation,
group) and how to fuse them. ``flat`` fusion learns one weighting over
every pillar kernel; ``staged`` first fuses each group, freezes those
weights and then fuses the group kernels.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import (
    LabelVector,
    _read_text,
    _write_bytes,
    l2_normalize_rows,
    load_feature_matrix,
    load_labels,
    load_split,
    parse_keyvalue,
    validate_split,
)
from .errors import (
    Empty,
    InvalidSpec,
    LabelOutOfRange,
    LengthMismatch,
    NoConvergence,
    PillarError,
)
from .kernels import KernelParams, combine_kernels, gamma_heuristic, kernel_gram, normalize_kernel
from .mkl import fit_mkl, mkl_predict
from .svm import predict_multiclass, train_one_vs_rest

log = logging.getLogger(__name__)


@dataclass
class PillarConfig:
    pillar_id: str
    features: str | None = None
    kernel: str = "rbf"
    gamma: str | float = "scale"
    normalization: str = "unit_mean_diag"
    group: str | None = None
    l2norm: bool = False


@dataclass
class FusionPlan:
    pillars: list
    mode: str = "staged"
    norm_mode: str = "l2"
    C: float = 100.0
    svm_tol: float = 1e-3
    eps: float = 1e-3
    l2_tol: float = 1e-5
    max_cuts: int = 300
    max_iter: int = 100
    seed: int = 0
    labels: str | None = None
    splits: list = field(default_factory=list)
    base_dir: str = "."

    def groups(self) -> dict:
        out = {}
        for p in self.pillars:
            out.setdefault(p.group or p.pillar_id, []).append(p.pillar_id)
        return out

    def validate(self):
        if not self.pillars:
            raise InvalidSpec("plan has no pillars")
        ids = [p.pillar_id for p in self.pillars]
        if len(set(ids)) != len(ids):
            raise InvalidSpec(f"duplicate pillar ids in {ids}")
        if self.mode not in ("flat", "staged"):
            raise InvalidSpec(f"fusion.mode must be flat or staged, got {self.mode!r}")
        if self.norm_mode not in ("l1", "l2"):
            raise InvalidSpec(f"fusion.norm must be l1 or l2, got {self.norm_mode!r}")
        if not self.C > 0:
            raise InvalidSpec("svm.C must be positive")

    def config(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else Path(self.base_dir) / path


@dataclass
class SplitResult:
    split_id: int
    pillar_accuracy: dict
    group_accuracy: dict
    fused_accuracy: float
    confusion: list
    test_indices: list
    truth: list
    scores: dict
    betas: dict
    flags: list


@dataclass
class Report:
    per_split: list
    average: dict
    config: dict
    flags: list


class StageError(PillarError):
    """A lower-level failure tagged with the split/stage/pillar it happened in."""

    def __init__(self, split_id, stage, cause):
        self.split_id, self.stage, self.cause = split_id, stage, cause
        super().__init__(f"split {split_id}, {stage}: {type(cause).__name__}: {cause}")


# -- plan files -----------------------------------------------------------

_BOOL = {"1": True, "true": True, "yes": True, "0": False, "false": False, "no": False}
_PILLAR_KEYS = {"features", "kernel", "gamma", "normalization", "group", "l2norm"}


def parse_plan(text: str, overrides: dict | None = None, base_dir=".") -> FusionPlan:
    """Parse a key=value plan; ``overrides`` (same dotted keys) win."""
    kv = parse_keyvalue(text)
    kv.update({k: str(v) for k, v in (overrides or {}).items()})
    pillars = {}
    plan = FusionPlan(pillars=[], base_dir=str(base_dir))
    scalars = {
        "fusion.mode": ("mode", str), "fusion.norm": ("norm_mode", str),
        "svm.C": ("C", float), "svm.tol": ("svm_tol", float), "mkl.eps": ("eps", float),
        "mkl.tol": ("l2_tol", float), "mkl.max_cuts": ("max_cuts", int),
        "mkl.max_iter": ("max_iter", int), "seed": ("seed", int), "labels": ("labels", str),
    }
    for key, value in kv.items():
        if key.startswith("pillar."):
            parts = key.split(".")
            if len(parts) != 3 or parts[2] not in _PILLAR_KEYS:
                raise InvalidSpec(f"unknown plan key {key!r}")
            pillars.setdefault(parts[1], {})[parts[2]] = value
        elif key == "splits":
            plan.splits = [s.strip() for s in value.split(",") if s.strip()]
        elif key in scalars:
            attr, cast = scalars[key]
            try:
                setattr(plan, attr, cast(value))
            except ValueError:
                raise InvalidSpec(f"bad value for {key}: {value!r}") from None
        else:
            raise InvalidSpec(f"unknown plan key {key!r}")
    for pid, fields in pillars.items():
        gamma = fields.get("gamma", "scale")
        if gamma not in ("scale", "median"):
            try:
                gamma = float(gamma)
            except ValueError:
                raise InvalidSpec(f"pillar {pid}: bad gamma {gamma!r}") from None
        l2 = fields.get("l2norm", "false").lower()
        if l2 not in _BOOL:
            raise InvalidSpec(f"pillar {pid}: bad l2norm {l2!r}")
        plan.pillars.append(PillarConfig(
            pid, fields.get("features"), fields.get("kernel", "rbf"), gamma,
            fields.get("normalization", "unit_mean_diag"), fields.get("group"), _BOOL[l2]))
    plan.validate()
    return plan


def load_plan(path, overrides=None) -> FusionPlan:
    return parse_plan(_read_text(path), overrides, Path(path).parent)


# -- metrics --------------------------------------------------------------

def accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.size} predictions for {truth.size} labels")
    if truth.size == 0:
        raise Empty("accuracy of an empty label set")
    return float(np.mean(pred == truth))


def confusion_matrix(pred, truth, n_classes) -> np.ndarray:
    """``[t][p]`` counts samples of true class t predicted as p."""
    pred, truth = np.asarray(pred, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.size} predictions for {truth.size} labels")
    for arr in (pred, truth):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (truth, pred), 1)
    return out


# -- protocol ---------------------------------------------------------------

def _pillar_kernels(cfg: PillarConfig, x, tr, te, seed):
    if cfg.l2norm:
        x = l2_normalize_rows(x)
    xtr, xte = x[tr], x[te]
    if cfg.kernel == "linear":
        params = KernelParams("linear")
    elif isinstance(cfg.gamma, str):
        params = KernelParams("rbf", gamma_heuristic(xtr, cfg.gamma, seed=seed))
    else:
        params = KernelParams("rbf", float(cfg.gamma))
    k_tr = kernel_gram(xtr, xtr, params)
    k_te = kernel_gram(xte, xtr, params)
    k_tr, scale = normalize_kernel(k_tr, cfg.normalization)
    return k_tr, k_te / scale, params


def _mkl_flags(model, where):
    flags = []
    if not model.converged:
        flags.append(f"{where}: mkl not converged")
    if not model.fused_svm.converged:
        flags.append(f"{where}: svm not converged")
    return flags


def _run_split(plan: FusionPlan, features, labels, n_classes, split) -> SplitResult:
    sid = split.split_id
    tr, te = split.train_indices, split.test_indices
    y_tr, y_te = labels[tr], labels[te]
    fit = dict(norm_mode=plan.norm_mode, C=plan.C, eps=plan.eps, tol=plan.l2_tol,
               svm_tol=plan.svm_tol, max_cuts=plan.max_cuts, max_iter=plan.max_iter,
               n_classes=n_classes)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PillarError as exc:
            raise StageError(sid, name, exc) from exc

    k_tr, k_te, scores, pillar_acc, flags, betas = {}, {}, {}, {}, [], {}
    for cfg in plan.pillars:
        pid = cfg.pillar_id
        k_tr[pid], k_te[pid], params = stage(
            f"pillar {pid} kernel", _pillar_kernels, cfg, features[pid], tr, te, plan.seed)
        model = stage(f"pillar {pid} svm", train_one_vs_rest, k_tr[pid], y_tr, plan.C,
                      plan.svm_tol, n_classes)
        if not model.converged:
            flags.append(f"pillar {pid}: svm not converged")
        pred, s = predict_multiclass(model, k_te[pid])
        pillar_acc[pid] = accuracy(pred, y_te)
        scores[f"pillar:{pid}"] = s.tolist()

    groups = plan.groups()
    group_acc, group_models, group_pred = {}, {}, {}
    for gid, members in groups.items():
        model = stage(f"group {gid} mkl", fit_mkl, [k_tr[p] for p in members], y_tr,
                      kernel_ids=members, **fit)
        flags += _mkl_flags(model, f"group {gid}")
        pred, s = mkl_predict(model, [k_te[p] for p in members])
        group_acc[gid] = accuracy(pred, y_te)
        group_pred[gid] = pred
        scores[f"group:{gid}"] = s.tolist()
        betas[f"group:{gid}"] = model.beta.tolist()
        group_models[gid] = model

    all_ids = [p.pillar_id for p in plan.pillars]
    if len(groups) == 1:
        # a single group spanning every pillar already is the global fusion
        (gid,) = groups
        fused_pred = group_pred[gid]
        fused_scores = scores[f"group:{gid}"]
        betas["fused"] = list(betas[f"group:{gid}"])
    else:
        if plan.mode == "flat":
            ids, tr_blocks, te_blocks = all_ids, [k_tr[p] for p in all_ids], [k_te[p] for p in all_ids]
        else:
            ids, tr_blocks, te_blocks = list(groups), [], []
            for gid, members in groups.items():
                beta = group_models[gid].beta
                ktr_g, scale = normalize_kernel(
                    combine_kernels([k_tr[p] for p in members], beta), "unit_mean_diag")
                tr_blocks.append(ktr_g)
                te_blocks.append(combine_kernels([k_te[p] for p in members], beta) / scale)
        model = stage("global fusion", fit_mkl, tr_blocks, y_tr, kernel_ids=ids, **fit)
        flags += _mkl_flags(model, "global fusion")
        fused_pred, s = mkl_predict(model, te_blocks)
        fused_scores = s.tolist()
        betas["fused"] = model.beta.tolist()
    scores["fused"] = fused_scores
    fused_acc = accuracy(fused_pred, y_te)
    cm = confusion_matrix(fused_pred, y_te, n_classes)
    return SplitResult(sid, pillar_acc, group_acc, fused_acc, cm.tolist(),
                       [int(i) for i in te], [int(v) for v in y_te], scores, betas,
                       [f"split {sid}: {f}" for f in flags])


def _average(per_split) -> dict:
    n = len(per_split)
    avg = {
        "pillar_accuracy": {k: sum(r.pillar_accuracy[k] for r in per_split) / n
                            for k in per_split[0].pillar_accuracy},
        "group_accuracy": {k: sum(r.group_accuracy[k] for r in per_split) / n
                           for k in per_split[0].group_accuracy},
        "fused_accuracy": sum(r.fused_accuracy for r in per_split) / n,
    }
    return avg


def run_protocol(plan: FusionPlan, labels=None, splits=None, features=None,
                 threads: int = 1) -> Report:
    """Evaluate ``plan`` on every split and average the accuracies.

    ``labels``, ``splits`` and ``features`` (dict pillar id -> matrix) fall
    back to the files the plan names.
    """
    plan.validate()
    if labels is None:
        if plan.labels is None:
            raise InvalidSpec("plan names no labels file")
        labels = load_labels(plan.resolve(plan.labels))
    y = np.asarray(getattr(labels, "labels", labels), dtype=np.int64)
    n_classes = int(getattr(labels, "n_classes", y.max() + 1))
    if splits is None:
        if not plan.splits:
            raise InvalidSpec("plan names no split files")
        splits = [load_split(plan.resolve(p), y.size, i + 1) for i, p in enumerate(plan.splits)]
    if features is None:
        features = {}
        for cfg in plan.pillars:
            if cfg.features is None:
                raise InvalidSpec(f"pillar {cfg.pillar_id} has no features file")
            features[cfg.pillar_id] = load_feature_matrix(plan.resolve(cfg.features))
    for pid, x in features.items():
        if x.shape[0] != y.size:
            raise InvalidSpec(f"pillar {pid} has {x.shape[0]} rows, labels have {y.size}")
    for s in splits:
        validate_split(s, LabelVector(y, n_classes))

    def one(split):
        log.info("split %s: %d train / %d test", split.split_id,
                 split.train_indices.size, split.test_indices.size)
        return _run_split(plan, features, y, n_classes, split)

    if threads > 1 and len(splits) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_split = list(pool.map(one, splits))
    else:
        per_split = [one(s) for s in splits]
    flags = [f for r in per_split for f in r.flags]
    return Report(per_split, _average(per_split), plan.config(), flags)


def check_strict(report: Report) -> None:
    if report.flags:
        raise NoConvergence("; ".join(report.flags))


# -- report emission --------------------------------------------------------

def report_to_dict(r: Report) -> dict:
    return asdict(r)


def report_from_dict(d: dict) -> Report:
    return Report([SplitResult(**s) for s in d["per_split"]], d["average"], d["config"], d["flags"])


def report_json(r: Report) -> str:
    return json.dumps(report_to_dict(r), indent=1, sort_keys=True) + "\n"


def accuracy_rows(r: Report):
    """Header plus one row per split and an Average row, accuracies in percent."""
    pillars = list(r.per_split[0].pillar_accuracy)
    groups = list(r.per_split[0].group_accuracy)
    header = ["split"] + pillars + [f"mkl:{g}" for g in groups] + ["fused"]
    rows = []
    for s in r.per_split:
        rows.append([f"split-{s.split_id}"]
                    + [100.0 * s.pillar_accuracy[p] for p in pillars]
                    + [100.0 * s.group_accuracy[g] for g in groups]
                    + [100.0 * s.fused_accuracy])
    avg = [sum(row[c] for row in rows) / len(rows) for c in range(1, len(header))]
    rows.append(["Average"] + avg)
    return header, rows


def accuracy_csv(r: Report) -> str:
    header, rows = accuracy_rows(r)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([row[0]] + [repr(v) for v in row[1:]])
    return buf.getvalue()


def format_table(r: Report) -> str:
    header, rows = accuracy_rows(r)
    cells = [header] + [[row[0]] + [f"{v:.1f}%" for v in row[1:]] for row in rows]
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    return "\n".join("  ".join(c[i].ljust(widths[i]) for i in range(len(c))) for c in cells)


def emit_report(r: Report, path) -> tuple:
    """Write ``<path>.report.json`` and ``<path>.accuracy.csv``."""
    path = str(path)
    json_path, csv_path = Path(path + ".report.json"), Path(path + ".accuracy.csv")
    _write_bytes(json_path, report_json(r).encode())
    _write_bytes(csv_path, accuracy_csv(r).encode())
    return json_path, csv_path


def load_report(path) -> Report:
    return report_from_dict(json.loads(_read_text(path)))
