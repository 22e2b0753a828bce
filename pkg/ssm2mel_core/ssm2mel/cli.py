"""
ssm2mel command line.

    ssm2mel synth    --spec spec.txt --out data/
    ssm2mel train    --config run.txt --data data/ --out runs/a [--set key=value ...]
    ssm2mel eval     --checkpoint runs/a/best --data data/ --split test
    ssm2mel selftest

Exit codes: 0 ok, 1 selftest failure, 2 usage/config, 3 IO, 4 numerical abort,
5 data/shape mismatch.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import BaseModel

from . import __version__
from .config import (
    Settings,
    configure_logging,
    load_run_config,
    load_synthetic_spec,
    override_config,
    parse_overrides,
    render_config,
)
from .data import SPLITS, load_dataset, save_dataset, synth_splits, write_tensor
from .errors import ConfigError, DataIOError, SelfTestFailure, SSM2MelError
from .numerics import set_debug_checks
from .selftest import run_selftest
from .train import evaluate, load_checkpoint, train_loop
from .worker_pool import WorkerPool

logger = logging.getLogger(__name__)


def print_config(config: BaseModel, title: str) -> None:
    print(f"# {title}")
    print(render_config(config), end="")
    print(flush=True)


def cmd_synth(args: argparse.Namespace, settings: Settings) -> int:
    spec = load_synthetic_spec(args.spec, parse_overrides(args.set))
    print_config(spec, "synthetic spec")
    splits = synth_splits(spec)
    count = save_dataset(args.out, splits, spec.sample_rate)
    counts = splits.counts()
    print(f"{count} recordings written to {args.out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    overrides = parse_overrides(args.set)
    if args.data:
        overrides.setdefault("data_dir", args.data)
    if args.out:
        overrides.setdefault("out_dir", args.out)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and args.config is None:
        config = override_config(resume.run_config, overrides)
    else:
        config = load_run_config(args.config, overrides)
    print_config(config, "run configuration")
    if not config.data_dir or not config.out_dir:
        raise ConfigError("train needs a dataset (--data or data_dir) and an output directory (--out or out_dir)")
    dataset = load_dataset(config.data_dir)
    result = train_loop(config, dataset, out_dir=config.out_dir,
                        workers=args.workers or settings.workers, resume=resume)
    last = result.history[-1] if result.history else None
    if last is None:
        summary = "no epochs run"
    elif dataset.val:
        summary = f"best val pearson {result.best.best_val:.4f}"
    else:
        summary = f"best train loss {-result.best.best_val:.5f} (no validation split)"
    print(f"training finished: {len(result.history)} epochs, {summary}; checkpoints in {config.out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    print_config(checkpoint.run_config, "run configuration")
    recordings = load_dataset(args.data).split(args.split)
    with WorkerPool(args.workers or settings.workers) as pool:
        report = evaluate(checkpoint.params, checkpoint.model_config, recordings, pool,
                          keep_predictions=bool(args.dump_pred))
    for rid, value in report.per_recording.items():
        print(f"{rid}\t{value:.6f}")
    print(f"mean\t{report.mean:.6f}")
    report_path = Path(args.report) if args.report else Path(args.checkpoint) / "report.txt"
    try:
        report_path.parent.mkdir(parents=True, exist_ok=True)
        report_path.write_text(report.render(), encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot write {report_path}: {e}") from e
    if args.dump_pred:
        for rid, pred in report.predictions.items():
            write_tensor(Path(args.dump_pred) / f"{rid}.ssmt", pred)
    return 0


def cmd_selftest(args: argparse.Namespace, settings: Settings) -> int:
    report = run_selftest(corrupt_op=args.corrupt_op)
    print(report.render())
    if not report.passed:
        raise SelfTestFailure(f"selftest failed: {', '.join(report.failures)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssm2mel", description="EEG to mel-spectrogram decoding with state-space models")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic EEG/mel dataset")
    synth.add_argument("--spec", help="key=value synthetic spec file (defaults if omitted)")
    synth.add_argument("--out", required=True, help="dataset directory to create")
    synth.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a spec key")
    synth.set_defaults(handler=cmd_synth)

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--config", help="key=value run config file")
    train.add_argument("--data", help="dataset directory")
    train.add_argument("--out", help="output directory for checkpoints and metrics")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    train.add_argument("--resume", help="checkpoint directory to continue from")
    train.add_argument("--workers", type=int, help="parallel crop workers")
    train.set_defaults(handler=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="test", choices=SPLITS)
    ev.add_argument("--dump-pred", help="directory for predicted mel TensorFiles")
    ev.add_argument("--report", help="report path (default <checkpoint>/report.txt)")
    ev.add_argument("--workers", type=int, help="parallel evaluation workers")
    ev.set_defaults(handler=cmd_eval)

    selftest = sub.add_parser("selftest", help="run the embedded verification suite")
    selftest.add_argument("--corrupt-op", help=argparse.SUPPRESS)
    selftest.set_defaults(handler=cmd_selftest)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings()
    except Exception as e:
        print(f"error: invalid SSM2MEL_* environment: {e}", file=sys.stderr)
        return ConfigError.exit_code
    configure_logging(settings)
    set_debug_checks(settings.debug_numerics)
    try:
        return args.handler(args, settings)
    except SSM2MelError as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    finally:
        set_debug_checks(False)


if __name__ == "__main__":
    sys.exit(main())
