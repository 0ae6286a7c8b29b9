"""Command-line entry point: ``nes-lab <command> [options]``.

Exit codes: 0 success, 2 configuration or regime error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, noise as nz
from .datasets import read_idx_labels, write_idx_labels
from .errors import ConfigError, DomainError, IdxFormatError, NumericalError


def _config(args, **extra):
    overrides = dict(extra)
    if args.out:
        overrides["output.dir"] = args.out
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    return harness.load_config(args.config, overrides)


def _print_summary(summary):
    for k in summary.mean:
        print(f"{k}: clean test accuracy {summary.mean[k]:.4f} +/- {summary.std[k]:.4f}")
    print(f"summary written to {summary.path}")


def cmd_train(args):
    _print_summary(harness.cmd_train(_config(args), jobs=args.jobs))


def cmd_sweep(args):
    cfg = _config(args)
    etas = [float(e) for e in args.etas.split(",")] if args.etas else None
    rows, path = harness.cmd_sweep(cfg, etas, jobs=args.jobs)
    for r in rows:
        cells = " ".join(f"{k}={v:.4f}" for k, v in r.mean.items())
        print(f"eta={r.eta:g} {cells} threshold={r.threshold:.4g}")
    print(f"sweep written to {path}")


def cmd_scatter(args):
    fit = harness.cmd_scatter(args.runlog, args.output, args.eta, args.classes)
    print(f"points={fit.n} slope={fit.slope:.4f} intercept={fit.intercept:.4f} r2={fit.r2:.4f}")
    print(f"theory slope={fit.theory_slope:.4f} intercept={fit.theory_intercept:.4f}")


def cmd_tree_depth(args):
    cfg = _config(args)
    depths = harness.parse_ints(args.depths) if args.depths else None
    results, path = harness.cmd_tree_depth(cfg, depths, jobs=args.jobs)
    for r in results:
        print(f"seed={r.seed} noisy_argmax={r.noisy_argmax} clean_argmax={r.clean_argmax} "
              f"deficit={r.deficit:.4f}")
    print(f"depth table written to {path}")


def cmd_gvector(args):
    results, path = harness.cmd_gvector(_config(args), jobs=args.jobs)
    for r in results:
        w = r.window
        print(f"seed={r.seed} minima window=({w.t1},{w.t2}) width={w.width} degenerate={w.degenerate}")
    print(f"g-vectors written to {path}")


def cmd_bounds(args):
    matrix = None
    if args.matrix:
        matrix = nz.TransitionMatrix.load(args.matrix)
    elif args.preset:
        matrix = {"perm": nz.PERM_SYMMETRIC_T, "five-class": nz.FIVE_CLASS_T}[args.preset]
    kind = args.kind or ("matrix" if matrix is not None else "general")
    report = harness.cmd_bounds(kind, noisy_acc=args.noisy_acc, noisy_risk=args.noisy_risk,
                                noisy_risk_l=args.noisy_risk_l, eta=args.eta, eta_min=args.eta_min,
                                eta_max=args.eta_max, matrix=matrix)
    for line in report.lines():
        print(line)


def _matrix_from_args(args) -> nz.TransitionMatrix:
    if getattr(args, "matrix", None):
        return nz.TransitionMatrix.load(args.matrix)
    values = {"noise.kind": args.kind, "noise.eta": str(args.eta),
              "noise.include_original": str(args.include_original).lower()}
    if args.pairs:
        values["noise.pairs"] = args.pairs
    if args.groups:
        values["noise.groups"] = args.groups
    cfg = harness.ExperimentConfig.from_mapping(values)
    T = harness.noise_matrix(cfg, args.classes)
    if T is None:
        raise ConfigError([f"noise kind {args.kind!r} has no single transition matrix"])
    return T


def cmd_gen_noise(args):
    T = _matrix_from_args(args)
    if args.output:
        T.save(args.output)
        print(f"matrix written to {args.output}")
    else:
        sys.stdout.write(T.to_text())


def _read_labels(path):
    try:
        return read_idx_labels(path).astype(np.int64)
    except IdxFormatError:
        return np.loadtxt(path, dtype=np.int64, ndmin=1)


def cmd_inject(args):
    labels = _read_labels(args.labels)
    if args.matrix is None:
        args.classes = args.classes or int(labels.max()) + 1
    T = _matrix_from_args(args)
    seed = 0 if args.seed is None else args.seed
    noisy = harness.inject_labels(labels, T, seed)
    if args.output.endswith((".idx", "-ubyte")):
        write_idx_labels(args.output, noisy)
    else:
        np.savetxt(args.output, noisy, fmt="%d")
    print(f"flipped {int(np.sum(noisy != labels))} of {labels.size} labels; written to {args.output}")


def cmd_fetch(args):
    from .fetch import fetch

    print(fetch(args.name, Path(args.root) if args.root else None, force=args.force))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (key = value lines)")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="run a single seed (overrides seeds)")
    common.add_argument("--jobs", type=int, default=1, help="parallel seed/grid tasks")

    p = argparse.ArgumentParser(prog="nes-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train every seed, summarise NES/ES/WES").set_defaults(fn=cmd_train)

    s = sub.add_parser("sweep", parents=[common], help="train across noise rates")
    s.add_argument("--etas", help="comma-separated rates (overrides sweep.etas)")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("scatter", parents=[common], help="noisy vs clean accuracy per epoch")
    s.add_argument("runlog")
    s.add_argument("--output", help="scatter CSV path (default: next to the run log)")
    s.add_argument("--eta", type=float, help="effective symmetric rate for the theoretical line")
    s.add_argument("--classes", type=int, help="number of classes for the theoretical line")
    s.set_defaults(fn=cmd_scatter)

    s = sub.add_parser("tree-depth", parents=[common], help="decision trees across depths")
    s.add_argument("--depths", help="depth grid, e.g. 1-20 (overrides tree.depths)")
    s.set_defaults(fn=cmd_tree_depth)

    sub.add_parser("gvector", parents=[common], help="g-vector trajectories").set_defaults(fn=cmd_gvector)

    s = sub.add_parser("bounds", parents=[common], help="worst-case gap bounds")
    s.add_argument("--kind", choices=["matrix", "general", "pairwise"])
    s.add_argument("--matrix", help="transition matrix file")
    s.add_argument("--preset", choices=["perm", "five-class"])
    acc = s.add_mutually_exclusive_group(required=True)
    acc.add_argument("--noisy-acc", type=float, help="best noisy accuracy")
    acc.add_argument("--noisy-risk", type=float, help="best noisy 0-1 risk")
    s.add_argument("--noisy-risk-l", type=float, help="noisy risk of the clean-risk minimiser")
    s.add_argument("--eta", type=float)
    s.add_argument("--eta-min", type=float)
    s.add_argument("--eta-max", type=float)
    s.set_defaults(fn=cmd_bounds)

    def noise_args(s, need_classes):
        s.add_argument("--kind", default="symmetric", choices=harness.ORACLE_KINDS)
        s.add_argument("--eta", type=float, default=0.0)
        s.add_argument("--classes", type=int, required=need_classes, default=None)
        s.add_argument("--include-original", action="store_true")
        s.add_argument("--pairs", help="source:target pairs, e.g. 9:1,2:0")
        s.add_argument("--groups", help="class groups, e.g. '0 1 2;3 4 5'")

    s = sub.add_parser("gen-noise", parents=[common], help="print a transition matrix")
    noise_args(s, True)
    s.add_argument("--output", help="write the matrix to a file instead of stdout")
    s.set_defaults(fn=cmd_gen_noise, matrix=None)

    s = sub.add_parser("inject", parents=[common], help="add label noise to a label file")
    s.add_argument("labels", help="IDX label file or text file with one label per line")
    s.add_argument("output")
    s.add_argument("--matrix", help="transition matrix file (instead of --kind/--eta)")
    noise_args(s, False)
    s.set_defaults(fn=cmd_inject)

    s = sub.add_parser("fetch", help="download a dataset family into the data cache")
    s.add_argument("name", choices=["mnist", "fashion"])
    s.add_argument("--root", help="cache directory (default: $NES_LAB_DATA or ~/.cache/nes_lab)")
    s.add_argument("--force", action="store_true")
    s.set_defaults(fn=cmd_fetch)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, DomainError, IdxFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
