"""Command-line entry point: run, sweep, verify, partition."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data import (
    PartitionSpec,
    dirichlet_partition,
    label_entropy,
    label_histogram,
    load_dataset_files,
    write_partition_manifest,
)
from .errors import ApflError
from .experiments import RunConfig, parse_sweep_values, run_experiment, run_sweep
from .verify import run_all


def _cmd_run(args) -> int:
    cfg = RunConfig.from_json(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    report = run_experiment(cfg)
    print(
        f"clients={len(report.client_ids)} "
        f"mean dual={report.mean_dual:.4f} mean primary={report.mean_primary:.4f} "
        f"(weighted {report.weighted_dual:.4f} / {report.weighted_primary:.4f})"
    )
    if cfg.output_dir:
        print(f"wrote report.json and accuracy.csv under {cfg.output_dir}")
    else:
        print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_sweep(args) -> int:
    cfg = RunConfig.from_json(args.config)
    if args.output_dir:
        cfg.output_dir = args.output_dir
    values = parse_sweep_values(args.param, args.values)
    reports = run_sweep(cfg, args.param, values)
    for v, rep in zip(values, reports):
        print(
            f"{args.param}={v}: mean dual={rep.mean_dual:.4f} "
            f"mean primary={rep.mean_primary:.4f}"
        )
    if cfg.output_dir:
        print(f"wrote sweep.csv and plots under {cfg.output_dir}")
    return 0


def _cmd_verify(args) -> int:
    report = run_all(seed=args.seed, inject_fault=args.inject_fault)
    for suite in report.suites:
        print(suite.summary_line())
    if not report.passed:
        print("verification FAILED", file=sys.stderr)
        return 1
    print("all verification suites passed")
    return 0


def _cmd_partition(args) -> int:
    ds = load_dataset_files(args.features, args.labels)
    spec = PartitionSpec(num_clients=args.clients, alpha=args.alpha, seed=args.seed)
    parts = dirichlet_partition(ds, spec)
    write_partition_manifest(args.out, spec, parts)
    hist = label_histogram(ds, parts)
    for k, row in enumerate(hist):
        counts = " ".join(str(c) for c in row)
        print(f"client {k}: n={row.sum()} entropy={label_entropy(row):.3f} counts=[{counts}]")
    print(f"wrote manifest to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apfl",
        description=(
            "Gradient-free personalized federated learning: closed-form "
            "dual-stream training with one-shot aggregation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one federated run from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the run config JSON")
    p_run.add_argument("--output-dir", help="override the config's output directory")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="re-run one config across parameter values")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument(
        "--param",
        required=True,
        choices=["lambda", "gamma", "beta", "d_p", "d_r", "act_p", "act_r", "alpha"],
    )
    p_sweep.add_argument("--values", required=True, help="comma-separated list")
    p_sweep.add_argument("--output-dir", help="override the config's output directory")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_verify = sub.add_parser(
        "verify", help="run the randomized equivalence and invariance suites"
    )
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument(
        "--inject-fault",
        action="store_true",
        help="sabotage finalization to prove the suites detect deviations",
    )
    p_verify.set_defaults(func=_cmd_verify)

    p_part = sub.add_parser(
        "partition", help="partition a feature/label file pair and write a manifest"
    )
    p_part.add_argument("--features", required=True)
    p_part.add_argument("--labels", required=True)
    p_part.add_argument("--clients", type=int, required=True)
    p_part.add_argument("--alpha", type=float, required=True)
    p_part.add_argument("--seed", type=int, default=0)
    p_part.add_argument("--out", required=True)
    p_part.set_defaults(func=_cmd_partition)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ApflError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
