import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch
from loguru import logger

from app.config import (
    build_generator_config,
    build_training_config,
    load_generator_config,
    load_training_config,
    settings,
)
from app.data.scene import load_scenes
from app.data.synth_data import generate, write_dataset
from app.models.checkpoint import load_checkpoint
from app.services.benchmark_service import BenchmarkService
from app.services.curve_study import BASES, run_curve_study
from app.services.evaluation_service import EvaluationService
from app.services.forecast_service import ForecastService, load_predictions, save_predictions
from app.services.training_service import TrainingService
from app.utils.errors import SimplError


def setup_logging(level: str = None) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level or settings.LOG_LEVEL, format="{time:HH:mm:ss} | {level: <7} | {message}")


# Commands
def cmd_gen_data(args: argparse.Namespace) -> None:
    config = load_generator_config(args.config, seed=args.seed) if args.config else build_generator_config(seed=args.seed)
    write_dataset(generate(config), config, args.out)


def cmd_train(args: argparse.Namespace) -> None:
    overrides = {"seed": args.seed, "epochs": args.epochs}
    config = load_training_config(args.config, **overrides) if args.config else build_training_config(**overrides)
    scenes = load_scenes(args.data)
    val_scenes = load_scenes(args.val) if args.val else None
    out = Path(args.out)
    metrics_path = out.with_name(out.stem + "_metrics.csv")
    TrainingService(config).train(scenes, val_scenes, metrics_path=metrics_path, checkpoint_path=out)


def cmd_predict(args: argparse.Namespace) -> None:
    service = ForecastService.from_checkpoint(args.ckpt)
    save_predictions(service.predict_all(load_scenes(args.scene)), args.out)
    logger.info(f"predictions written to {args.out}")


def cmd_eval(args: argparse.Namespace) -> None:
    evaluator = EvaluationService()
    rows, report = evaluator.score(load_predictions(args.pred), load_scenes(args.scene))
    evaluator.write_report(rows, report, args.out)


def cmd_bench(args: argparse.Namespace) -> None:
    torch.set_num_threads(settings.NUM_THREADS)
    bench = BenchmarkService(load_checkpoint(args.ckpt), repeats=args.repeats)
    rows = bench.run(load_scenes(args.scenes), args.emulate_agent_centric) if args.scenes else []
    if args.sizes:
        rows.extend(bench.token_sweep(args.sizes))
    bench.write(rows, args.out)
    logger.info(f"{len(rows)} latency rows written to {args.out}")


def cmd_fitcurve(args: argparse.Namespace) -> None:
    bases = BASES if args.basis == "both" else (args.basis,)
    run_curve_study(load_scenes(args.input), args.degree, args.out, bases)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simpl", description="Multi-agent motion forecasting toolkit")
    parser.add_argument("--log-level", default=None, help="overrides SIMPL_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic lane-following scenes")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--val", default=None, help="held-out scene file or directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict every agent of the given scenes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="inference latency benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scenes", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--emulate-agent-centric", action="store_true")
    p.add_argument("--sizes", type=int, nargs="+", default=None, help="token counts of generated sweep scenes")
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fitcurve", help="coefficient distribution of fitted tracks")
    p.add_argument("--input", required=True)
    p.add_argument("--degree", type=int, default=5)
    p.add_argument("--basis", choices=("both", *BASES), default="both")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fitcurve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    setup_logging(args.log_level)
    if args.command == "bench" and not (args.scenes or args.sizes):
        logger.error("bench needs --scenes or --sizes")
        return 2

    logger.info(f"{args.command} started")
    try:
        args.func(args)
    except SimplError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    logger.info(f"{args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())
