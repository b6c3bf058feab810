"""Command-line entry point: train / eval / diagnose / verify / make-corpus.

Exit codes: 0 success, 2 configuration or usage error, 3 corpus or file
ingestion error, 4 training divergence, 5 oracle verification failure.
Report files land in --out, the MIRNN_REPORT_DIR environment variable,
or the current directory, in that order of preference.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import resume_session, save_checkpoint
from .config import ExperimentConfig
from .data import synthesize_corpus
from .diagnostics import (
    CurveExperimentConfig,
    NormExperimentConfig,
    ScalingSweepConfig,
    activation_histogram,
    emit_report,
    gradient_norm_experiment,
    scaling_sweep,
    validation_curves,
)
from .errors import ConfigError, DivergenceError, IngestionError, ShapeError, VerificationError
from .oracles import run_all_checks
from .training import TrainingSession, evaluate_bpc, write_metrics_csv

REPORT_DIR_ENV = "MIRNN_REPORT_DIR"


def _out_dir(args) -> str:
    return args.out or os.environ.get(REPORT_DIR_ENV) or "."


def _print_epoch(row) -> None:
    train = "-" if row.train_bpc is None else f"{row.train_bpc:.4f}"
    print(f"epoch {row.epoch:3d}  train_bpc {train}  valid_bpc {row.valid_bpc:.4f}  "
          f"lr {row.lr:g}")


def run_train(args) -> int:
    if args.resume:
        session = resume_session(args.resume)
        if args.config:
            file_cfg = ExperimentConfig.from_file(args.config)
            if file_cfg != session.config:
                raise ConfigError(
                    "checkpoint was created with a different config than the given file"
                )
    else:
        if not args.config:
            raise ConfigError("train needs --config (or --resume with a checkpoint)")
        session = TrainingSession(ExperimentConfig.from_file(args.config))
    cfg = session.config
    out_dir = _out_dir(args)
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    best_path = os.path.join(out_dir, "best.ckpt")
    last_path = os.path.join(out_dir, "last.ckpt")

    if session.valid_unk or session.test_unk:
        print(f"note: {session.valid_unk} validation / {session.test_unk} test "
              "characters fall outside the training vocabulary (mapped to UNK)")
    try:
        if session.epoch == 0 and not session.metrics:
            row = session.initial_validation()
            _print_epoch(row)
            save_checkpoint(best_path, session)
        for past in session.metrics:
            if past.epoch > 0:
                _print_epoch(past)
        while session.epoch < cfg.epochs:
            row = session.run_epoch()
            _print_epoch(row)
            if session.best_epoch == row.epoch:
                save_checkpoint(best_path, session)
    except DivergenceError as e:
        save_checkpoint(last_path, session)
        write_metrics_csv(metrics_path, session.metrics)
        print(f"divergence: {e}; state saved to {last_path}", file=sys.stderr)
        return 4
    save_checkpoint(last_path, session)
    write_metrics_csv(metrics_path, session.metrics)
    print(f"metrics: {metrics_path}")
    if os.path.exists(best_path):
        print(f"best checkpoint (epoch {session.best_epoch}, "
              f"valid_bpc {session.best_val_bpc:.4f}): {best_path}")
    print(f"last checkpoint: {last_path}")
    return 0


def run_eval(args) -> int:
    session = resume_session(args.ckpt)
    cfg = session.config
    indices = session.valid_idx if args.split == "valid" else session.test_idx
    if len(indices) <= cfg.seq_len:
        raise IngestionError(f"{args.split} split too short to evaluate")
    bpc = evaluate_bpc(session.model, indices, cfg.seq_len, cfg.batch_size)
    print(f"{args.split} bpc {bpc!r}")
    return 0


def _parse_floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e


def _parse_ints(text: str) -> tuple:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e


def run_diagnose(args) -> int:
    base = ExperimentConfig.from_file(args.config)
    out_dir = _out_dir(args)
    if args.experiment == "norms":
        cfg = NormExperimentConfig(base=base)
        result = gradient_norm_experiment(cfg)
    elif args.experiment == "hist":
        session = TrainingSession(base)
        session.run()
        result = activation_histogram(session, tag=f"{base.cell}-{base.mode}")
    elif args.experiment == "sweep":
        kwargs = {}
        if args.r_w:
            kwargs["r_w_values"] = _parse_floats(args.r_w)
        if args.seeds:
            kwargs["seeds"] = _parse_ints(args.seeds)
        result = scaling_sweep(ScalingSweepConfig(base=base, **kwargs))
    else:
        kwargs = {}
        if args.seeds:
            kwargs["seeds"] = _parse_ints(args.seeds)
        result = validation_curves(CurveExperimentConfig(base=base, **kwargs))
    paths = emit_report(result.to_bundle(), out_dir)
    print(f"report: {paths['csv']}")
    print(f"summary: {paths['summary']}")
    return 0


def run_verify(args) -> int:
    manifest = run_all_checks(seed=args.seed, thorough=args.thorough)
    for check in manifest["checks"]:
        mark = "pass" if check["passed"] else "FAIL"
        print(f"[{mark}] {check['name']}: {check['detail']}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "verify_manifest.json")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        print(f"manifest: {path}")
    if not manifest["all_passed"]:
        raise VerificationError("one or more oracle checks failed (see manifest)")
    print("all checks passed")
    return 0


def run_make_corpus(args) -> int:
    text = synthesize_corpus(n_chars=args.chars, seed=args.seed)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {len(text)} characters to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirnn",
        description="Multiplicative-integration recurrent networks: train, "
                    "evaluate, diagnose, and verify against oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="output directory for metrics/checkpoints")
    p.set_defaults(func=run_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a corpus split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=("valid", "test"), default="test")
    p.set_defaults(func=run_eval)

    p = sub.add_parser("diagnose", help="run a training diagnostic experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--experiment", required=True,
                   choices=("norms", "hist", "sweep", "curves"))
    p.add_argument("--seeds", help="comma-separated seeds (sweep/curves)")
    p.add_argument("--r-w", dest="r_w", help="comma-separated init scales (sweep)")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=run_diagnose)

    p = sub.add_parser("verify", help="run the oracle suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--thorough", action="store_true",
                   help="acceptance-scale instance counts")
    p.add_argument("--out", help="directory for the JSON manifest")
    p.set_defaults(func=run_verify)

    p = sub.add_parser("make-corpus", help="write a deterministic synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--chars", type=int, default=500_000)
    p.add_argument("--seed", type=int, default=1234)
    p.set_defaults(func=run_make_corpus)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except IngestionError as e:
        print(f"ingestion error: {e}", file=sys.stderr)
        return 3
    except DivergenceError as e:
        print(f"divergence: {e}", file=sys.stderr)
        return 4
    except VerificationError as e:
        print(f"verification failure: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
