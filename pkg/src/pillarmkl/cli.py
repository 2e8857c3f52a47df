"""``pillarmkl`` command line.

Exit codes: 0 success, 1 user error (bad flags, missing or malformed
files), 2 internal error or a non-converged solve under ``--strict``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import dataio, fisher, kernels, mkl, pipeline, svm
from .errors import BadMagic, InvalidSpec, NoConvergence, PillarError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(flag):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} must be an integer, got {text!r}")
        if value < 1:
            raise argparse.ArgumentTypeError(f"{flag} must be >= 1, got {value}")
        return value
    return parse


def _gamma(text):
    if text in ("scale", "median"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--gamma must be scale, median or a number, got {text!r}")
    if value <= 0:
        raise argparse.ArgumentTypeError("--gamma must be positive")
    return value


# -- subcommands ------------------------------------------------------------

def cmd_synth(args):
    if args.layout == "complementary":
        if args.pillars != 4:
            raise InvalidSpec("--layout complementary requires --pillars 4")
        spec = dataio.complementary_spec(args.samples, args.classes, args.dims, args.noise,
                                         args.seed, args.separation)
        groups = ["netA", "netA", "netB", "netB"]
    else:
        subsets = dataio.default_subsets(args.classes, args.pillars)
        spec = dataio.SyntheticSpec(
            args.samples, args.classes,
            tuple(dataio.PillarSpec(args.dims, s, args.noise) for s in subsets),
            args.seed, args.separation)
        groups = [f"g{p // 2}" for p in range(args.pillars)]
    pillars, labels, splits = dataio.generate_synthetic_pillars(spec)
    plan = dataio.write_fixture(args.out, pillars, labels, splits, groups, args.seed,
                                args.norm, args.mode)
    print(f"wrote {len(pillars)} pillars, {len(labels)} labels, {len(splits)} splits; plan {plan}")


def _rows(args, n):
    if args.split is None:
        return np.arange(n)
    return dataio.load_split(args.split, n).train_indices


def cmd_make_kernels(args):
    x = dataio.load_feature_matrix(args.features)
    if args.l2norm:
        x = dataio.l2_normalize_rows(x)
    if args.kernel == "linear":
        params = kernels.KernelParams("linear")
    else:
        gamma = args.gamma
        if isinstance(gamma, str):
            gamma = kernels.gamma_heuristic(x, gamma, seed=args.seed)
        params = kernels.KernelParams("rbf", gamma)
    k = kernels.gram_matrix(x, params, pillar_id=Path(args.features).stem)
    k = kernels.normalize_kernel_matrix(k, args.normalization)
    dataio.write_kernel_matrix(k.values, args.out, k.provenance)
    psd = kernels.check_psd(k)
    print(f"{args.out}: n={k.n} kind={params.kind} gamma={params.gamma} "
          f"normalization={args.normalization} psd={'pass' if psd else 'fail'}")


def cmd_train_svm(args):
    labels = dataio.load_labels(args.labels)
    k = dataio.load_kernel_matrix(args.kernel)
    if k.shape[0] != len(labels):
        raise InvalidSpec(f"kernel has {k.shape[0]} rows, labels have {len(labels)}")
    rows = _rows(args, len(labels))
    model = svm.train_one_vs_rest(k[np.ix_(rows, rows)], labels.labels[rows], args.C, args.tol,
                                  labels.n_classes, index_map=rows)
    svm.save_svm_model(model, args.out)
    pred, _ = svm.predict_multiclass(model, k[np.ix_(rows, rows)])
    print(f"{args.out}: {model.n_classes} classes, train accuracy "
          f"{100 * pipeline.accuracy(pred, labels.labels[rows]):.1f}%, converged={model.converged}")
    if args.strict and not model.converged:
        raise NoConvergence("SMO hit max_iter")


def cmd_train_mkl(args):
    labels = dataio.load_labels(args.labels)
    paths = [p for p in args.kernels.split(",") if p]
    ks = [dataio.load_kernel_matrix(p) for p in paths]
    rows = _rows(args, len(labels))
    for p, k in zip(paths, ks):
        if k.shape[0] != len(labels):
            raise InvalidSpec(f"{p} has {k.shape[0]} rows, labels have {len(labels)}")
    model = mkl.fit_mkl([k[np.ix_(rows, rows)] for k in ks], labels.labels[rows], args.norm,
                        C=args.C, eps=args.eps, tol=args.l2_tol, n_classes=labels.n_classes,
                        kernel_ids=[Path(p).name for p in paths])
    mkl.save_mkl_model(model, args.out)
    if args.trace:
        dataio._write_bytes(args.trace, mkl.trace_csv(model).encode())
    print(f"{args.out}: norm={model.norm_mode} beta={np.round(model.beta, 6).tolist()} "
          f"iterations={len(model.trace)} converged={model.converged}")
    if args.strict and not (model.converged and model.svm_converged):
        raise NoConvergence("MKL did not converge")


def cmd_run_protocol(args):
    overrides = {k: v for k, v in {
        "fusion.norm": args.norm, "fusion.mode": args.mode, "svm.C": args.C,
        "mkl.eps": args.eps, "seed": args.seed}.items() if v is not None}
    plan = pipeline.load_plan(args.plan, overrides)
    report = pipeline.run_protocol(plan, threads=args.threads)
    json_path, csv_path = pipeline.emit_report(report, args.out)
    print(pipeline.format_table(report))
    for flag in report.flags:
        print(f"warning: {flag}", file=sys.stderr)
    print(f"wrote {json_path} and {csv_path}", file=sys.stderr)
    if args.strict:
        pipeline.check_strict(report)


def _read_manifest(path):
    base = Path(path).parent
    text = dataio._read_text(path)
    entries = [line.strip() for line in text.splitlines() if line.strip()]
    if not entries:
        raise InvalidSpec(f"manifest {path} lists no descriptor files")
    return [p if Path(p).is_absolute() else base / p for p in entries]


def cmd_encode_fisher(args):
    sets = [dataio.load_feature_matrix(p).astype(np.float64) for p in _read_manifest(args.manifest)]
    dims = {s.shape[1] for s in sets}
    if len(dims) != 1:
        raise InvalidSpec(f"descriptor files disagree on dimension: {sorted(dims)}")
    g = fisher.gmm_em(np.vstack(sets), args.k, seed=args.seed, tol=args.tol,
                      max_iter=args.max_iter)
    fv = fisher.encode_corpus(g, sets, args.normalization)
    dataio.write_feature_matrix(fv, args.out + ".plrf")
    fisher.save_gmm(g, args.out + ".plgm")
    print(f"{args.out}.plrf: {fv.shape[0]}x{fv.shape[1]}; {args.out}.plgm: K={g.n_components} "
          f"D={g.dim} converged={g.converged}")


def _inspect_lines(path):
    buf = dataio._read_bytes(path)
    magic = buf[:4]
    if magic == b"PLRF":
        x = dataio.parse_feature_matrix(buf, path)
        return [f"PLRF v1 n_samples={x.shape[0]} n_dims={x.shape[1]}", "check finite: pass"]
    if magic == b"PLRK":
        k = dataio.parse_kernel_matrix(buf, path)
        psd = kernels.check_psd(k)
        lines = [f"PLRK v1 n={k.shape[0]}",
                 f"check symmetric: {'pass' if np.array_equal(k, k.T) else 'fail'}",
                 "check psd: " + ("pass" if psd else f"fail (min eigenvalue {psd.min_eigenvalue:.3g})")]
        prov = dataio.load_provenance(path)
        lines += [f"provenance {k}={v}" for k, v in prov.items()]
        return lines
    if magic == b"PLSV":
        model = svm.parse_svm_model(buf, path)
        models = [model] if isinstance(model, svm.BinarySvmModel) else model.per_class
        kind = "binary" if isinstance(model, svm.BinarySvmModel) else f"ovr n_classes={model.n_classes}"
        box = all(np.all((m.alpha >= 0) & (m.alpha <= m.C)) for m in models)
        eq = max(abs(float(m.alpha @ m.y)) / m.C for m in models)
        return [f"PLSV v1 {kind} n={models[0].alpha.size} C={models[0].C}",
                f"check box 0<=alpha<=C: {'pass' if box else 'fail'}",
                f"check |sum alpha*y|/C <= 1e-8: {'pass' if eq <= 1e-8 else 'fail'} ({eq:.2e})",
                f"converged: {all(m.converged for m in models)}"]
    if magic == b"PLMK":
        m = mkl.parse_mkl_model(buf, path)
        if m.norm_mode == "l1":
            ok = abs(m.beta.sum() - 1) <= 1e-8
        else:
            ok = float(m.beta @ m.beta) <= 1 + 1e-8
        return [f"PLMK v1 norm={m.norm_mode} kernels={m.kernel_ids}",
                f"beta={m.beta.tolist()}",
                f"check beta >= 0: {'pass' if np.all(m.beta >= 0) else 'fail'}",
                f"check {m.norm_mode} constraint: {'pass' if ok else 'fail'}",
                f"trace entries={len(m.trace)} converged={m.converged}"]
    if magic == b"PLGM":
        g = fisher.parse_gmm(buf, path)
        ok = abs(g.weights.sum() - 1) <= 1e-10 and np.all(g.weights >= 1e-10)
        return [f"PLGM v1 K={g.n_components} D={g.dim}",
                f"check weights: {'pass' if ok else 'fail'}",
                f"check variances > 0: {'pass' if np.all(g.variances > 0) else 'fail'}"]
    raise BadMagic(f"unrecognised magic {magic!r}", offset=0, path=path)


def cmd_inspect(args):
    for line in _inspect_lines(args.file):
        print(line)


# -- parser ---------------------------------------------------------------

def build_parser():
    p = _Parser(prog="pillarmkl", description="Multi-kernel SVM fusion of feature pillars.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a seeded synthetic multi-pillar fixture")
    s.add_argument("--classes", type=_positive_int("--classes"), default=4)
    s.add_argument("--samples", type=_positive_int("--samples"), default=400)
    s.add_argument("--pillars", type=_positive_int("--pillars"), default=4)
    s.add_argument("--dims", type=_positive_int("--dims"), default=16)
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--separation", type=float, default=3.0)
    s.add_argument("--layout", choices=["roundrobin", "complementary"], default="roundrobin")
    s.add_argument("--fusion.norm", dest="norm", choices=["l1", "l2"], default="l2")
    s.add_argument("--fusion.mode", dest="mode", choices=["flat", "staged"], default="staged")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("make-kernels", help="build a PLRK Gram matrix from a PLRF file")
    s.add_argument("--features", required=True)
    s.add_argument("--kernel", choices=["rbf", "linear"], default="rbf")
    s.add_argument("--gamma", type=_gamma, default="scale")
    s.add_argument("--normalization", choices=["none", "unit_mean_diag"], default="unit_mean_diag")
    s.add_argument("--l2norm", action="store_true", help="L2-normalise feature rows first")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_make_kernels)

    s = sub.add_parser("train-svm", help="one-vs-rest SVM on a PLRK kernel")
    s.add_argument("--kernel", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--split", help="train on the split's training rows only")
    s.add_argument("--svm.C", dest="C", type=float, default=svm.DEFAULT_C)
    s.add_argument("--svm.tol", dest="tol", type=float, default=svm.DEFAULT_TOL)
    s.add_argument("--strict", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_svm)

    s = sub.add_parser("train-mkl", help="learn kernel weights over several PLRK kernels")
    s.add_argument("--kernels", required=True, help="comma-separated PLRK paths")
    s.add_argument("--labels", required=True)
    s.add_argument("--split")
    s.add_argument("--fusion.norm", dest="norm", choices=["l1", "l2"], default="l2")
    s.add_argument("--svm.C", dest="C", type=float, default=svm.DEFAULT_C)
    s.add_argument("--mkl.eps", dest="eps", type=float, default=mkl.DEFAULT_EPS)
    s.add_argument("--mkl.tol", dest="l2_tol", type=float, default=mkl.DEFAULT_L2_TOL)
    s.add_argument("--trace", help="write the solver trace as CSV")
    s.add_argument("--strict", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_mkl)

    s = sub.add_parser("run-protocol", help="evaluate a plan over its splits")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True, help="prefix for .report.json / .accuracy.csv")
    s.add_argument("--fusion.norm", dest="norm", choices=["l1", "l2"])
    s.add_argument("--fusion.mode", dest="mode", choices=["flat", "staged"])
    s.add_argument("--svm.C", dest="C", type=float)
    s.add_argument("--mkl.eps", dest="eps", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=_positive_int("--threads"), default=os.cpu_count() or 1)
    s.add_argument("--strict", action="store_true", help="exit 2 if any solver did not converge")
    s.set_defaults(func=cmd_run_protocol)

    s = sub.add_parser("encode-fisher", help="fit a GMM and Fisher-encode descriptor sets")
    s.add_argument("--manifest", required=True)
    s.add_argument("--k", type=_positive_int("--k"), default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-iter", type=_positive_int("--max-iter"), default=100)
    s.add_argument("--normalization", choices=["raw", "improved"], default="improved")
    s.add_argument("--out", required=True, help="prefix for .plrf / .plgm")
    s.set_defaults(func=cmd_encode_fisher)

    s = sub.add_parser("inspect", help="print header and invariant checks of any artifact file")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except NoConvergence as exc:
        print(f"error: not converged: {exc}", file=sys.stderr)
        return 2
    except (PillarError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
