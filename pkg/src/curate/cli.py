"""Command-line entry points.

    curate run --config cfg.txt [--seed N] [--out DIR]
    curate sample-bench --ratio {0.5|0.8|0.9} --size B [options]
    curate flops --scenario S --f F --A A [options]
    curate plot --csv metrics.csv --out DIR

Exit codes: 0 on success, 2 on configuration errors, 3 on runtime failures.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .configio import ConfigError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curate",
        description="Joint sub-batch selection experiments for contrastive training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment scenario from a config file")
    run.add_argument("--config", required=True, help="path to a key=value config file")
    run.add_argument("--seed", type=int, default=None, help="override the dataset seed")
    run.add_argument("--out", default=None, help="override the output directory")

    bench = sub.add_parser(
        "sample-bench",
        help="compare joint, independent, uniform, and swap-chain sampling "
        "on a synthetic score matrix",
    )
    bench.add_argument(
        "--ratio",
        required=True,
        choices=("0.5", "0.8", "0.9"),
        help="filtering ratio f (fraction of the super-batch discarded)",
    )
    bench.add_argument("--size", required=True, type=int, help="super-batch size B")
    bench.add_argument("--chunks", type=int, default=16, help="number of chunks N")
    bench.add_argument("--runs", type=int, default=20, help="sampler runs to average")
    bench.add_argument("--sweeps", type=int, default=200, help="swap-chain sweeps")
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--out", default=None, help="write a per-chunk CSV here")

    flops = sub.add_parser("flops", help="print the per-data-point cost model")
    flops.add_argument(
        "--scenario",
        required=True,
        choices=("iid_baseline", "jest", "flexi_jest"),
        help="cost accounting to report",
    )
    flops.add_argument("--f", type=float, required=True, help="filtering ratio")
    flops.add_argument("--A", type=float, default=0.28, help="approximation factor")
    flops.add_argument("--lam", type=float, default=None, help="approximate fraction")
    flops.add_argument(
        "--base-examples",
        type=float,
        default=None,
        help="with --lam, print the matching iso-FLOP example budget",
    )
    flops.add_argument(
        "--include-reference",
        action="store_true",
        help="charge an uncached reference scoring pass per super-batch item",
    )

    plot = sub.add_parser("plot", help="render figures from a metrics CSV")
    plot.add_argument("--csv", required=True, help="metrics CSV produced by run")
    plot.add_argument("--out", required=True, help="output directory for figures")

    return parser


def _cmd_run(args) -> int:
    from .experiments import load_experiment_config, run_experiment

    cfg = load_experiment_config(args.config)
    summary = run_experiment(cfg, seed=args.seed, output_dir=args.out)
    for key, value in summary.items():
        print(f"{key} = {value}")
    return 0


def _bench_matrix(size: int, rng: np.random.Generator) -> np.ndarray:
    """Clustered learnability-style matrix: one high-scoring block plus noise."""
    n_clusters = 8
    labels = rng.integers(0, n_clusters, size=size)
    base = rng.normal(0.0, 0.2, size=(n_clusters, n_clusters))
    base[0, 0] = 1.0
    values = base[np.ix_(labels, labels)] + rng.normal(0.0, 0.1, size=(size, size))
    return values


def _cmd_sample_bench(args) -> int:
    from .sampling import (
        SelectionConfig,
        gibbs_oracle,
        independent_sample,
        joint_score,
        jointly_sample_sigmoid,
        resolve_sub_batch,
        uniform_sample,
    )
    from .scoring import LEARNABILITY, ScoreMatrix

    rng = np.random.default_rng(args.seed)
    values = _bench_matrix(args.size, rng)
    scores = ScoreMatrix(values, method=LEARNABILITY, gain=1.0)
    cfg = SelectionConfig(
        n_chunks=args.chunks, filter_ratio=float(args.ratio), gain=1.0
    )
    b, chunk = resolve_sub_batch(cfg, args.size)
    print(f"super-batch B={args.size}  sub-batch b={b}  chunks N={args.chunks}")

    per_chunk = np.zeros(args.chunks)
    joint_scores = []
    independent_scores = []
    uniform_scores = []
    for _ in range(args.runs):
        selection = jointly_sample_sigmoid(scores, cfg, rng)
        for k in range(args.chunks):
            per_chunk[k] += joint_score(values, selection.indices[: (k + 1) * chunk])
        joint_scores.append(selection.joint_score)
        independent_scores.append(independent_sample(scores, cfg, rng).joint_score)
        uniform_scores.append(uniform_sample(args.size, b, rng, scores).joint_score)
    per_chunk /= args.runs
    oracle = gibbs_oracle(scores, b, args.sweeps, rng)

    print("chunk  mean joint score")
    for k in range(args.chunks):
        print(f"{k + 1:5d}  {per_chunk[k]:.4f}")
    print(f"joint sampling  : {np.mean(joint_scores):.4f}")
    print(f"independent     : {np.mean(independent_scores):.4f}")
    print(f"uniform         : {np.mean(uniform_scores):.4f}")
    print(f"swap-chain ({args.sweeps} sweeps): {oracle.joint_score:.4f}")

    if args.out:
        import csv as csv_module
        from pathlib import Path

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "sample_bench.csv", "w", newline="") as fh:
            writer = csv_module.writer(fh, lineterminator="\n")
            writer.writerow(["chunk", "mean_joint_score"])
            for k in range(args.chunks):
                writer.writerow([k + 1, repr(float(per_chunk[k]))])
        print(f"wrote {out / 'sample_bench.csv'}")
    return 0


def _cmd_flops(args) -> int:
    from . import flops as fl

    if args.scenario == "iid_baseline":
        per_point = fl.cost_iid()
        ratio = 1.0
    elif args.scenario == "jest":
        per_point = fl.cost_jest(args.f, include_reference=args.include_reference)
        ratio = fl.ratio_jest(args.f, include_reference=args.include_reference)
    else:
        per_point = fl.cost_flexi(
            args.f, args.A, include_reference=args.include_reference
        )
        ratio = fl.ratio_flexi(args.f, args.A, include_reference=args.include_reference)
    print(f"scenario          : {args.scenario}")
    print(f"filter ratio f    : {args.f}")
    if args.scenario == "flexi_jest":
        print(f"approx factor A   : {args.A}")
    print(f"cost per point    : {per_point:.6g} F")
    print(f"ratio vs IID      : {ratio:.6g}")
    print(f"overhead vs IID   : {fl.overhead_percent(ratio):.4g} %")
    if args.lam is not None:
        fractions = fl.multires_train_cost_fraction()
        print(f"multires flops fraction : {fractions[0]:.6g}")
        print(f"multires time fraction  : {fractions[1]:.6g}")
        if args.base_examples is not None:
            budget = fl.iso_flop_budget(args.base_examples, args.lam)
            print(f"iso-FLOP budget   : {budget:.6g} examples")
    return 0


def _cmd_plot(args) -> int:
    from .plots import emit_plots

    paths = emit_plots(args.csv, args.out)
    for path in paths:
        print(f"wrote {path}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sample-bench": _cmd_sample_bench,
        "flops": _cmd_flops,
        "plot": _cmd_plot,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
