"""Command-line entry point: one experiment per invocation.

Usage:
    python main.py train --config configs/train_made.cfg
    python main.py heatmap --config configs/heatmap.cfg --seed 3
    python main.py report --run-dir runs/heatmap-seed0

Exit status is 0 on success; otherwise the error category decides it
(config 2, data 3, numerical 4, io 5, anything else 1).
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from arbench.core.config import load_run_config, settings
from arbench.core.errors import ConfigError, error_category, exit_code_for
from arbench.experiments.runs import run_experiment
from arbench.models.run_config import ExperimentKind

logger = logging.getLogger(__name__)

DESCRIPTIONS = {
    ExperimentKind.TRAIN: "train an AR model (MADE or pixel) or the feature classifier",
    ExperimentKind.HEATMAP: "gradient-norm and density fields of a 2-D MADE",
    ExperimentKind.OPTIMIZE: "gradient descent on inputs under a frozen AR model",
    ExperimentKind.DETECT: "outlier detection matrix over probe sets",
    ExperimentKind.ARCYCLE: "train ARCycle generators against frozen AR models",
    ExperimentKind.REPORT: "re-render plots and tables from a run's CSVs",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arbench", description="Autoregressive density model workbench")
    parser.add_argument("--log-level", default=None, help=f"logging level (default {settings.LOG_LEVEL})")
    subcommands = parser.add_subparsers(dest="experiment", required=True)
    for kind, help_text in DESCRIPTIONS.items():
        sub = subcommands.add_parser(kind.value, help=help_text, description=help_text)
        sub.add_argument("--config", help="key = value run config file")
        sub.add_argument("--seed", type=int, help="override the run seed")
        sub.add_argument("--output", help="run directory for artifacts")
        if kind == ExperimentKind.REPORT:
            sub.add_argument("--run-dir", help="run directory whose CSVs are re-rendered")
    return parser


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    overrides = {"experiment": args.experiment, "seed": args.seed, "output_dir": args.output}
    try:
        cfg = load_run_config(args.config, overrides)
        if getattr(args, "run_dir", None):
            cfg = cfg.model_copy(update={"report": cfg.report.model_copy(update={"run_dir": args.run_dir})})
        result = run_experiment(cfg)
    except ValidationError as e:
        print(f"error [config]: {e}", file=sys.stderr)
        return exit_code_for(ConfigError(str(e)))
    except Exception as e:
        category = error_category(e)
        logger.debug("run failed", exc_info=True)
        print(f"error [{category}]: {e}", file=sys.stderr)
        return exit_code_for(e)
    print(f"{result.experiment} finished: {len(result.artifacts)} artifacts in {result.run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
