#!/usr/bin/env python3
"""
Main entry point for equiboot: odds-ratio simulation study, blind-versus-equity
dataset pipeline, and synthetic data dumps.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config.settings import (  # noqa: E402
    RunMode,
    apply_overrides,
    load_experiment_config,
    settings,
)
from pipelines.orchestrator_app import ExperimentOrchestrator  # noqa: E402
from services.dataset import load_csv, write_csv  # noqa: E402
from services.exceptions import ConfigError, EquibootError  # noqa: E402
from services.reporting import report_render  # noqa: E402

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_INTERRUPTED = 130


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Set up logging configuration."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]

    if log_file:
        try:
            handlers.append(logging.FileHandler(log_file))
        except (PermissionError, OSError):
            # Unwritable location - stdout only
            pass

    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="equiboot - equity-directed bootstrapping experiments"
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help="Set the logging level (default: EQUIBOOT_LOG_LEVEL or INFO)"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Run the odds-ratio simulation study")
    simulate.add_argument("--config", required=True, help="Experiment config file (INI or YAML)")
    simulate.add_argument("--scenario", action="append",
                          help="Scenario preset name; repeat to select several")
    simulate.add_argument("--seed", type=int, help="Master seed")
    simulate.add_argument("--out", help="Output directory")
    simulate.add_argument("--replications", type=int, help="Replications per scenario")

    pipeline = commands.add_parser("pipeline", help="Run blind vs equity training on a CSV dataset")
    pipeline.add_argument("--data", required=True, help="Input CSV file")
    pipeline.add_argument("--config", required=True, help="Experiment config file (INI or YAML)")
    pipeline.add_argument("--seed", type=int, help="Master seed")
    pipeline.add_argument("--out", help="Output directory")

    gen = commands.add_parser("gen", help="Write one synthetic dataset to CSV")
    gen.add_argument("--config", required=True, help="Experiment config file (INI or YAML)")
    gen.add_argument("--out", required=True, help="Output CSV path")
    gen.add_argument("--scenario", help="Scenario preset name (default: first configured)")
    gen.add_argument("--seed", type=int, help="Master seed")
    return parser


def run_command(args: argparse.Namespace) -> int:
    logger = logging.getLogger(__name__)
    config = load_experiment_config(args.config)
    config = apply_overrides(
        config,
        master_seed=args.seed,
        output_dir=getattr(args, "out", None) if args.command != "gen" else None,
        scenarios=getattr(args, "scenario", None) if args.command == "simulate" else None,
        replications=getattr(args, "replications", None),
    )
    orchestrator = ExperimentOrchestrator()

    if args.command == "simulate":
        if config.mode is not RunMode.SIMULATE:
            logger.warning("Config mode is %s; running the simulation anyway", config.mode.value)
        report = orchestrator.run_simulation(config)
        print(report_render(report, config.output_dir))
    elif args.command == "pipeline":
        data = load_csv(args.data, config.schema)
        report = orchestrator.run_dataset_pipeline(config, data)
        print(report_render(report, config.output_dir))
    else:
        data = orchestrator.generate_dataset(config, args.scenario)
        write_csv(data, args.out, config.schema)
        logger.info("Wrote %d rows to %s", data.n, args.out)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for equiboot."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    setup_logging(args.log_level or settings.log_level, settings.log_file)
    logger = logging.getLogger(__name__)

    try:
        return run_command(args)
    except KeyboardInterrupt:
        logger.info("Process interrupted by user")
        return EXIT_INTERRUPTED
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except (EquibootError, OSError, ValueError) as e:
        logger.error("Run failed: %s", e, exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
