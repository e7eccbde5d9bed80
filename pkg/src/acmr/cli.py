"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, dumps, load_config
from .data import DataError, generate_synthetic, load_dataset, save_dataset
from .evaluation import evaluate_gzsl, export_embeddings
from .ndcore import NonFiniteError, TrainingError
from .trainer import (build_classifier_trainset, gradcheck_components, train_acmr,
                      train_final_classifier)

log = logging.getLogger("acmr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None):
        cfg.out_dir = str(args.out)
    return cfg


def _dataset(cfg: RunConfig):
    if cfg.data is not None:
        d = cfg.data
        return load_dataset(d.features, d.attributes, d.labels, d.split)
    return generate_synthetic(cfg.synthetic)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dumps(cfg))
    return out


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ConfigError, DataError, CheckpointError, TrainingError, NonFiniteError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


def cmd_synth(cfg: RunConfig) -> dict:
    if cfg.synthetic is None:
        raise ConfigError("synth needs a 'synthetic' section in the config")
    ds = _stage("generate", generate_synthetic, cfg.synthetic)
    out = _out_dir(cfg)
    paths = _stage("write", save_dataset, ds, out)
    return {k: str(v) for k, v in paths.items()}


def cmd_train(cfg: RunConfig) -> dict:
    ds = _stage("load", _dataset, cfg)
    out = _out_dir(cfg)
    echo = cfg.to_dict()
    every = cfg.train.checkpoint_every

    def on_epoch(epoch, model, record):
        if every and (epoch + 1) % every == 0:
            save_checkpoint(out / f"checkpoint_epoch{epoch + 1:04d}.acmr", model, echo)

    model, history = _stage("train_acmr", train_acmr, ds, cfg.train, on_epoch)
    with open(out / "history.jsonl", "w") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    latents = _stage("build_classifier_trainset", build_classifier_trainset, model, ds, cfg.train)
    model.classifier = _stage("train_final_classifier", train_final_classifier, latents,
                              ds.num_classes, cfg.train)
    metrics = _stage("evaluate", evaluate_gzsl, model, None, ds).to_dict()
    save_checkpoint(out / "checkpoint.acmr", model, echo)
    _dump_json(out / "metrics.json", metrics)
    return metrics


def cmd_eval(cfg: RunConfig, checkpoint) -> dict:
    model, _ = load_checkpoint(checkpoint)
    ds = _stage("load", _dataset, cfg)
    return _stage("evaluate", evaluate_gzsl, model, None, ds).to_dict()


def cmd_export(cfg: RunConfig, checkpoint, out_path) -> int:
    model, _ = load_checkpoint(checkpoint)
    ds = _stage("load", _dataset, cfg)
    return _stage("export", export_embeddings, model, ds, out_path)


def cmd_gradcheck(cfg: RunConfig, corrupt: str | None = None) -> dict:
    report = gradcheck_components(seed=cfg.train.seed, corrupt=corrupt)
    return {name: {"max_relative_error": r.max_relative_error, "worst_parameter": r.worst_parameter,
                   "worst_index": list(r.worst_index or ()), "checked": r.n_checked,
                   "passed": r.max_relative_error < GRADCHECK_TOLERANCE}
            for name, r in report.items()}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration JSON")
    common.add_argument("--seed", type=int, help="override the configured seed")
    parser = _Parser(prog="acmr", description="Aligned cross-modal representations for GZSL")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--out", type=Path)
    p = sub.add_parser("train", parents=[common], help="train, evaluate and checkpoint")
    p.add_argument("--out", type=Path)
    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, help="also write metrics.json here")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient report")
    p.add_argument("--corrupt", choices=["rec", "ma", "rep", "iem"], help=argparse.SUPPRESS)
    p = sub.add_parser("export-embeddings", parents=[common], help="write latent means as CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ACMR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "synth":
            paths = cmd_synth(cfg)
            print(json.dumps(paths, indent=2, sort_keys=True))
        elif args.command == "train":
            print(json.dumps(cmd_train(cfg), indent=2, sort_keys=True))
        elif args.command == "eval":
            metrics = cmd_eval(cfg, args.checkpoint)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                _dump_json(args.out / "metrics.json", metrics)
            print(json.dumps(metrics, indent=2, sort_keys=True))
        elif args.command == "gradcheck":
            report = cmd_gradcheck(cfg, args.corrupt)
            for name, r in report.items():
                status = "ok" if r["passed"] else "FAIL"
                print(f"{name:10s} max_rel_err={r['max_relative_error']:.3e} "
                      f"worst={r['worst_parameter']}{tuple(r['worst_index'])} {status}")
            failed = [n for n, r in report.items() if not r["passed"]]
            if failed:
                print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
                return EXIT_NUMERIC
        elif args.command == "export-embeddings":
            args.out.mkdir(parents=True, exist_ok=True)
            n = cmd_export(cfg, args.checkpoint, args.out / "embeddings.csv")
            print(f"wrote {n} rows to {args.out / 'embeddings.csv'}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"stage {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(cause, (TrainingError, NonFiniteError)):
            return EXIT_NUMERIC
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
