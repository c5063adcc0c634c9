"""``tascforge`` command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime/model error,
4 capacity error (search space too large to enumerate).
"""

import argparse
import logging
import os
import sys

from . import pipeline
from .config import load_config
from .errors import ConfigError, SpaceTooLarge, TascError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CAPACITY = 0, 2, 3, 4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
COMMANDS = ("pretrain", "tune", "prune", "run", "oracle", "report")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tascforge",
        description="Bayesian head tuning and similarity-based filter pruning.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="output directory (created if missing)")
    parser.add_argument("--model", default=None,
                        help="input checkpoint: backbone for tune/oracle, tuned model for prune")
    return parser


def _configure_logging():
    name = os.environ.get("TASCFORGE_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        cfg = load_config(args.config)
        seed = cfg["seed"] if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        out = args.out or cfg["out"] or "tascforge_out"
        if args.command == "pretrain":
            _, _, metrics = pipeline.pretrain(cfg, out, seed)
            print(f"source val accuracy {metrics['source_val_accuracy']:.4f}")
        elif args.command == "tune":
            result = pipeline.tune(cfg, out, seed, args.model)
            print(f"best {result.best.config.describe()}: {result.best.accuracy:.4f}")
        elif args.command == "prune":
            result = pipeline.prune(cfg, out, seed, args.model)
            print(f"{len(result.plans)} pruning iteration(s) attempted")
        elif args.command == "oracle":
            records, best = pipeline.oracle(cfg, out, seed, args.model)
            print(f"{len(records)} configurations; best accuracy {best['accuracy']:.4f}")
        elif args.command == "run":
            _, text = pipeline.run(cfg, out, seed)
            print(text, end="")
        elif args.command == "report":
            _, text = pipeline.build_report(out)
            print(text, end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpaceTooLarge as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (TascError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
