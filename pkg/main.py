"""
Imaginary-geometry fan simulator - command line entry point
One subcommand per experiment; each run writes a canonical JSON report.
"""

import argparse
import sys
from typing import List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

# Load environment variables before the logger reads LOG_LEVEL / LOG_DIR
load_dotenv()

from harness.config import EXPERIMENT_IDS, load_config, output_path  # noqa: E402
from harness.experiments import REGISTRY, run_experiment  # noqa: E402
from harness.output import write_report  # noqa: E402
from utils.errors import ConfigError, NumericalError, ParameterError  # noqa: E402
from utils.logger import setup_logger  # noqa: E402

logger = setup_logger("main_app")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="igfan",
        description="Simulate SLE curves, GFF flow lines and their fans, and check their properties",
    )
    sub = parser.add_subparsers(dest="experiment", metavar="EXPERIMENT")
    sub.required = True
    for name in EXPERIMENT_IDS:
        entry = REGISTRY[name]
        cmd = sub.add_parser(name, help=entry.description, description=entry.description)
        cmd.add_argument("--config", help="JSON config file")
        cmd.add_argument("--out", help="output directory (default $IG_OUTPUT_DIR or results/)")
        cmd.add_argument("--seeds", type=int, help="number of Monte Carlo seeds")
        cmd.add_argument("--threads", type=int, help="worker processes for the seed fan-out")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help=f"override a field or knob; knobs: {', '.join(sorted(entry.knobs))}",
        )
        cmd.add_argument("--report", help="report file name inside the output directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one experiment and map failures to exit codes"""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(
            args.experiment,
            config_path=args.config,
            out=args.out,
            seeds=args.seeds,
            threads=args.threads,
            overrides=args.overrides,
        )
        report = run_experiment(config)
        target = output_path(config, args.report or f"{config.experiment}_report.json")
        write_report(report, target)
        print(target)
        return EXIT_OK
    except (ConfigError, ParameterError, ValidationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
