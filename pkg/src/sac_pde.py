#!/usr/bin/env python3

"""sac-pde - command-line entry point using the MVC split."""

import argparse
import sys
from typing import List, Optional

try:
    from .controller import ExperimentController
    from .experiments import SWEEP_PARAMETERS
    from .logging_config import configure_logging
    from .models import ConfigError, NumericalError
    from .outputs import TOOL_VERSION
    from .views import ConsoleView
except ImportError:
    # Handle running as script directly
    import os

    sys.path.insert(0, os.path.dirname(__file__))
    from controller import ExperimentController
    from experiments import SWEEP_PARAMETERS
    from logging_config import configure_logging
    from models import ConfigError, NumericalError
    from outputs import TOOL_VERSION
    from views import ConsoleView

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", help="scenario file (reference scenario if omitted)"
    )
    common.add_argument(
        "--output-dir", default="results", help="directory for CSVs and manifest"
    )
    common.add_argument("--seed", type=_seed, help="override the disturbance seed")
    noise = common.add_mutually_exclusive_group()
    noise.add_argument("--quiet", action="store_true", help="only report errors")
    noise.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="sac-pde",
        description="Sequential Action Control for linear evolution PDEs",
    )
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="run one closed loop")
    sweep = commands.add_parser(
        "sweep", parents=[common], help="rerun the scenario over parameter values"
    )
    sweep.add_argument("parameter", choices=SWEEP_PARAMETERS)
    sweep.add_argument(
        "values", nargs="+", help="values to sweep; windows are written a,b"
    )
    commands.add_parser("compare", parents=[common], help="SAC against LQR")
    commands.add_parser("analyze", parents=[common], help="modal stability report")
    check = commands.add_parser(
        "gradient-check",
        parents=[common],
        help="adjoint gradient vs finite differences",
    )
    check.add_argument("--tau", type=float, action="append", dest="taus")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)
    configure_logging(quiet=args.quiet, verbose=args.verbose)
    options = {}
    if args.command == "sweep":
        options = {"parameter": args.parameter, "values": args.values}
    elif args.command == "gradient-check":
        options = {"taus": args.taus}

    try:
        view = ConsoleView(quiet=args.quiet)
    except ImportError:
        print("Error: Rich library is required. Install with: pip install rich")
        return EXIT_FAILURE
    controller = ExperimentController(view)
    try:
        controller.load_config(args.config, args.seed)
    except ConfigError as e:
        view.show_error(str(e))
        return EXIT_CONFIG

    # controller.run reports errors through the view before re-raising
    try:
        status = controller.run(args.command, args.output_dir, **options)
    except ConfigError:
        return EXIT_CONFIG
    except NumericalError:
        return EXIT_NUMERICAL
    except KeyboardInterrupt:
        print("\nOperation interrupted by user", file=sys.stderr)
        return EXIT_FAILURE
    except Exception:
        return EXIT_FAILURE
    return EXIT_OK if status == "complete" else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
