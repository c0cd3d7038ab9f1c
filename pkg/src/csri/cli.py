"""Command-line entry point: ``csri {prepare,train,eval,compare}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .data import ManifestError, ProtocolError
from .evaluation import EvaluationError
from .experiment import (
    ConfigError,
    CorpusError,
    ExperimentConfig,
    MissingArtifact,
    cmd_compare,
    cmd_eval,
    cmd_prepare,
    cmd_train,
)
from .trainer import VARIANTS, TrainingDiverged

# most specific first: the first matching class names the category
ERROR_CATEGORIES = (
    (ConfigError, "config"),
    (CorpusError, "corpus"),
    (ProtocolError, "protocol"),
    (ManifestError, "manifest"),
    (CheckpointError, "checkpoint"),
    (MissingArtifact, "missing"),
    (TrainingDiverged, "training"),
    (EvaluationError, "evaluation"),
)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (INI)")
    common.add_argument("--seed", type=int, help="override data and training seed")
    common.add_argument("--workspace", help="override the workspace directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="csri", description="SR-FR experiments on native low-resolution faces")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("prepare", parents=[common], help="build the auxiliary pairs, native set and manifests")
    t = sub.add_parser("train", parents=[common], help="train one variant")
    t.add_argument("--variant", choices=VARIANTS, default="csri")
    e = sub.add_parser("eval", parents=[common], help="evaluate a trained variant")
    e.add_argument("--variant", choices=VARIANTS, default="csri")
    e.add_argument("--checkpoint", help="checkpoint to evaluate instead of the variant's final one")
    c = sub.add_parser("compare", parents=[common], help="tabulate evaluated variants")
    c.add_argument("--variant", action="append", choices=VARIANTS,
                   help="restrict the table to these variants (repeatable)")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.workspace is not None:
        cfg = dataclasses.replace(cfg, workspace=str(Path(args.workspace).resolve()))
    return cfg


def run(args) -> None:
    cfg = load_config(args)
    if args.command == "prepare":
        manifests = cmd_prepare(cfg)
        for name, m in manifests.items():
            print(f"{name}: " + ", ".join(f"{k}={v}" for k, v in m.counts.items() if v))
    elif args.command == "train":
        ckpt = cmd_train(cfg, args.variant)
        last = ckpt.history[-1] if ckpt.history else {}
        print(f"{args.variant}: {ckpt.step} steps, final objective {last.get('objective', float('nan')):.4f}")
    elif args.command == "eval":
        report = cmd_eval(cfg, args.variant, args.checkpoint)
        s = report.summary()
        print(f"{args.variant}: " + "  ".join(f"{k}={'-' if v is None else f'{100 * v:.2f}'}" for k, v in s.items()))
    elif args.command == "compare":
        if args.variant:
            cfg = dataclasses.replace(cfg, variants=tuple(args.variant))
        print(cmd_compare(cfg).to_text(), end="")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except tuple(cls for cls, _ in ERROR_CATEGORIES) as exc:
        category = next(name for cls, name in ERROR_CATEGORIES if isinstance(exc, cls))
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error[io]: {exc}" if isinstance(exc, OSError) else f"error[invalid]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
