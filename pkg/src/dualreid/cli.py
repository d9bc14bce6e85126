"""Command-line surface: train, eval, gradcheck, synth, inspect."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import checkpoint as ckpt_io
from .config import load_run_config
from .data import (
    SyntheticSpec,
    generate_synthetic_dataset,
    load_dataset_dir,
    load_synthetic_spec,
    write_dataset_dir,
)
from .errors import ConfigError, DivergenceError, EvaluationError, IngestionError, ShapeError
from .evaluation import evaluate_index
from .gradcheck import DEFAULT_EPSILON, DEFAULT_TOLERANCE, TARGETS, grad_check
from .training import train


def _add_synth_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--spec", type=Path, help="INI file with a [synthetic] section")
    p.add_argument("--out", type=Path, required=True)
    for f in dataclasses.fields(SyntheticSpec):
        flag = "--" + f.name.replace("_", "-")
        typ = {"int": int, "float": float}[f.type]
        p.add_argument(flag, type=typ, default=None, help=f"override {f.name}")


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = load_synthetic_spec(args.spec) if args.spec else SyntheticSpec()
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(SyntheticSpec)
        if getattr(args, f.name) is not None
    }
    if overrides:
        spec = dataclasses.replace(spec, **overrides)
    index = generate_synthetic_dataset(spec)
    write_dataset_dir(index, args.out)
    print(f"wrote {len(index.train)} train / {len(index.query)} query / "
          f"{len(index.gallery)} gallery tracklets to {args.out}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    run = load_run_config(args.config)
    index = load_dataset_dir(args.data)
    result = train(run, index, args.out, epochs=args.epochs, resume=args.resume)
    steps = len(result.log.train_records())
    print(f"trained {steps} steps; checkpoint: {result.checkpoint_path}")
    for record in result.log.eval_records()[-1:]:
        print(f"final eval ({record['mode']}): mAP={record['map']:.4f} "
              f"rank1={record['cmc']['rank1']:.4f}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    net = ckpt_io.restore_model(ckpt)
    index = load_dataset_dir(args.data)
    mode = "backbone" if args.mode == "backbone" else "full"
    metrics = evaluate_index(net, index, mode, metric=args.metric)
    print(metrics.text_report())
    record = {"ckpt": str(args.ckpt), "data": str(args.data), "mode": mode,
              "metric": args.metric, **metrics.as_record()}
    out = args.out or Path(args.ckpt).with_suffix(f".eval_{mode}.json")
    Path(out).write_text(json.dumps(record, indent=2, sort_keys=True))
    print(f"wrote record: {out}")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    targets = list(TARGETS) if args.target == "all" else [args.target]
    failed = False
    for target in targets:
        report = grad_check(target, seed=args.seed, epsilon=args.eps)
        print(report.format(tolerance=args.tol))
        failed = failed or not report.ok(args.tol)
    return 1 if failed else 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = ckpt_io.load_checkpoint(args.ckpt)
    n_params = sum(p.numel() for p in ckpt.params.values())
    print(f"checkpoint: {args.ckpt}")
    print(f"format version: {ckpt.format_version}")
    print(f"epoch: {ckpt.epoch}")
    print(f"parameters: {n_params} values in {len(ckpt.params)} tensors")
    print(f"momentum buffers: {len(ckpt.momentum)}")
    print("model config:")
    for key, value in sorted(dataclasses.asdict(ckpt.config).items()):
        print(f"  {key} = {value}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualreid",
        description="dual-branch video re-identification: training, evaluation, "
                    "dataset synthesis and gradient verification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--epochs", type=int, default=None, help="override max_epochs")
    p.add_argument("--resume", type=Path, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--mode", choices=("full", "backbone"), default="full")
    p.add_argument("--metric", choices=("euclidean", "cosine"), default="euclidean")
    p.add_argument("--out", type=Path, default=None, help="path for the JSON record")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--target", choices=(*TARGETS, "all"), required=True)
    p.add_argument("--eps", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)

    _add_synth_parser(sub)

    p = sub.add_parser("inspect", help="summarize a checkpoint")
    p.add_argument("--ckpt", type=Path, required=True)
    return parser


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "synth": _cmd_synth,
    "inspect": _cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ShapeError, IngestionError, EvaluationError,
            DivergenceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
