"""Command-line entry point: generate data, run suites, compare strategies,
attribute checkpoints.

All outputs land in ``--out`` (default from $MMAL_OUT, else ./out). Flags
override config-file values. Exit codes: 0 on success, 2 on configuration
or input errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import attribute_pool
from .config import parse_config
from .data import generate_synthetic, load_dataset, save_dataset
from .errors import ConfigError, LoadError
from .evaluation import (
    metrics_to_accuracy,
    pairwise_matrix,
    read_metrics,
    write_matrix,
    write_metrics,
)
from .loop import run_suite
from .model import load_model, save_model

_ENV_OUT = "MMAL_OUT"


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or os.environ.get(_ENV_OUT, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _check_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists; pass --force to overwrite")


def _apply_overrides(cfg, args: argparse.Namespace):
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.strategy is not None:
        updates["strategy"] = args.strategy
    if args.budget is not None:
        updates["round_budget"] = args.budget
    if args.rounds is not None:
        updates["num_rounds"] = args.rounds
    if args.split is not None:
        updates["split"] = args.split
    if args.fusion is not None:
        updates["fusion"] = args.fusion
    if args.reps is not None:
        updates["repetitions"] = args.reps
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
        cfg.validate()
    return cfg


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    if cfg.synth is None:
        raise ConfigError("generate needs a synthetic [dataset] section")
    synth = cfg.synth
    if args.seed is not None:
        synth = dataclasses.replace(synth, seed=args.seed)
    out = _out_dir(args)
    csv_path = out / "data.csv"
    _check_overwrite(csv_path, args.force)
    dataset = generate_synthetic(synth)
    meta_path = save_dataset(dataset, csv_path)
    d1, d2 = dataset.modality_dims
    print(
        f"wrote {csv_path} (+ {meta_path.name}): n={dataset.n} "
        f"classes={dataset.num_classes} dims=({d1}, {d2}) "
        f"train={dataset.train_indices.size} test={dataset.test_indices.size}"
    )
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(parse_config(args.config), args)
    out = _out_dir(args)
    metrics_path = out / "metrics.csv"
    selections_path = out / "selections.ndjson"
    _check_overwrite(metrics_path, args.force)
    _check_overwrite(selections_path, args.force)
    bundle = run_suite([cfg], keep_final_models=True)
    write_metrics(bundle.metrics_rows(), metrics_path)
    with open(selections_path, "w") as fh:
        for row in bundle.selection_rows():
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    for run in bundle.runs:
        ckpt = out / f"model_rep{run.repetition}.npz"
        _check_overwrite(ckpt, args.force)
        save_model(run.final_model, ckpt)
    final = [run.reports[-1] for run in bundle.runs]
    mm = np.mean([r.mm_top1 for r in final])
    m1 = np.mean([r.m1_top1 for r in final])
    m2 = np.mean([r.m2_top1 for r in final])
    print(
        f"{cfg.name}/{cfg.strategy}: final round labeled={final[0].labeled_size} "
        f"mm_top1={mm:.4f} m1_top1={m1:.4f} m2_top1={m2:.4f} "
        f"({len(final)} repetition(s))"
    )
    print(f"wrote {metrics_path} and {selections_path}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    rows = []
    for path in args.inputs:
        rows.extend(read_metrics(path))
    accuracy = metrics_to_accuracy(rows, metric=args.metric)
    matrix = pairwise_matrix(accuracy, confidence=args.confidence)
    out = _out_dir(args)
    matrix_path = out / f"pairwise_{args.metric}.csv"
    _check_overwrite(matrix_path, args.force)
    write_matrix(matrix, matrix_path)
    width = max(len(s) for s in matrix.strategies) + 2
    print(f"pairwise wins on {args.metric} ({matrix.settings_count} setting(s), "
          f"{matrix.rounds} round(s), confidence {matrix.confidence}):")
    print(" " * width + "".join(f"{s:>{width}}" for s in matrix.strategies))
    for name, row in zip(matrix.strategies, matrix.p):
        print(f"{name:>{width}}" + "".join(f"{v:>{width}.3f}" for v in row))
    print(f"{'col_avg':>{width}}"
          + "".join(f"{v:>{width}.3f}" for v in matrix.column_averages()))
    print(f"wrote {matrix_path}")
    return 0


def cmd_attribute(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    out = _out_dir(args)
    out_path = out / "attributions.csv"
    _check_overwrite(out_path, args.force)
    attr = attribute_pool(model, dataset.x_m1, dataset.x_m2)
    with open(out_path, "w") as fh:
        fh.write(
            "index,shapley_m1,shapley_m2,phi_m1,phi_m2,rho,w_m1,w_m2,degenerate\n"
        )
        for i in range(dataset.n):
            values = [
                attr.phi[i, 0], attr.phi[i, 1],
                attr.contributions[i, 0], attr.contributions[i, 1],
                attr.rho[i], attr.weights[i, 0], attr.weights[i, 1],
            ]
            cells = ",".join(repr(float(v)) for v in values)
            fh.write(f"{i},{cells},{int(attr.degenerate[i])}\n")
    print(
        f"wrote {out_path}: {dataset.n} samples, "
        f"mean contribution=({attr.contributions[:, 0].mean():.4f}, "
        f"{attr.contributions[:, 1].mean():.4f})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmal",
        description="Balanced multimodal active-learning simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default=None,
                       help=f"output directory (default: ${_ENV_OUT} or ./out)")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--config", required=True)
    gen.add_argument("--seed", type=int, default=None)
    common(gen)
    gen.set_defaults(fn=cmd_generate)

    run = sub.add_parser("run", help="run an active-learning suite")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--strategy", default=None)
    run.add_argument("--budget", type=int, default=None)
    run.add_argument("--rounds", type=int, default=None)
    run.add_argument("--split", type=int, default=None)
    run.add_argument("--fusion", default=None)
    run.add_argument("--reps", type=int, default=None)
    common(run)
    run.set_defaults(fn=cmd_run)

    cmp_ = sub.add_parser("compare", help="pairwise matrix from metrics files")
    cmp_.add_argument("--inputs", nargs="+", required=True)
    cmp_.add_argument("--metric", default="mm_top1",
                      choices=["mm_top1", "m1_top1", "m2_top1"])
    cmp_.add_argument("--confidence", type=float, default=0.9)
    common(cmp_)
    cmp_.set_defaults(fn=cmd_compare)

    att = sub.add_parser("attribute", help="per-sample attribution records")
    att.add_argument("--model", required=True)
    att.add_argument("--data", required=True)
    common(att)
    att.set_defaults(fn=cmd_attribute)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, LoadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
