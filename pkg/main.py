from pathlib import Path
from pprint import pformat
from utils.config import add_config_arguments, load_environment
from utils.errors import VSRError
from utils.logging import LoggerFactory
from utils.tasks import Task, all_tasks
from argparse import ArgumentParser, Namespace
from traceback import format_exc
from typing import Optional, Sequence
import sys
from time import time

DEFAULT_LOG_DIR = Path(__file__).parent / "logs"


def build_parser(env: dict[str, Optional[str]]) -> ArgumentParser:
    log_dir = Path(env["log_dir"]) if env.get("log_dir") else DEFAULT_LOG_DIR
    work_dir = Path(env["work_dir"]) if env.get("work_dir") else Path("work")

    parent = ArgumentParser(add_help=False)
    common_group = parent.add_argument_group("common options")
    common_group.add_argument(
        "--work-dir",
        type=Path,
        default=work_dir,
        help=f"Default location of corpora, runs and reports (default: {work_dir})",
    )
    common_group.add_argument(
        "-y",
        "--yes",
        action="store_true",
        help="Write into non-empty output directories without asking",
    )

    # Logging args
    log_group = parent.add_argument_group("logging options")
    log_group.add_argument("--debug", action="store_true", help="Run in debug mode")
    log_group.add_argument(
        "--log-dir",
        type=Path,
        default=log_dir,
        help=f"Directory for log file (default: {log_dir})",
    )
    log_group.add_argument(
        "--rotate-logs",
        action="store_true",
        dest="rotate_logs",
        help="Enable log rotation by date",
    )
    log_group.add_argument(
        "--no-console",
        action="store_false",
        dest="console_output",
        help="Disable console logging output",
    )

    parser = ArgumentParser(description="Visual speech recognition with auxiliary tasks, desk-scale toolkit")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for task in all_tasks():
        sub = subparsers.add_parser(task.name, help=task.help, description=task.help, parents=[parent])
        task.add_arguments(sub)
        if task.uses_config:
            add_config_arguments(sub)
        sub.set_defaults(task=task)
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> Namespace:
    """Parse command line arguments."""
    return build_parser(load_environment()).parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = parse_args(argv)

    LoggerFactory.initialize(
        log_path=args.log_dir / "vsr.log",
        debug=args.debug,
        console_output=args.console_output,
        rotate_logs=args.rotate_logs,
    )
    logger = LoggerFactory.get_logger("main")
    shown = {k: v for k, v in vars(args).items() if v is not None and not k.startswith(("cfg__", "corpus__"))}
    logger.debug(f"Starting `{args.command}` with args:\n{pformat(shown)}")

    start_time = time()
    task: Task = args.task(args)
    try:
        task.run()
    except VSRError as e:
        logger.error(f"{args.command} failed ({type(e).__name__}): {e}")
        logger.debug(format_exc())
        return e.exit_code
    except Exception as e:
        logger.error(f"{args.command} failed unexpectedly: {e}\n{format_exc()}")
        raise

    elapsed_time = time() - start_time
    logger.info(f"`{args.command}` completed successfully! Took {elapsed_time:.2f} seconds.")
    return 0


if __name__ == "__main__":
    sys.exit(main())
