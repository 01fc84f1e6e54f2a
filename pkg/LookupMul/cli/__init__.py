import argparse
import traceback
from typing import List, Optional

from LookupMul import __version__
from LookupMul.cli.commands import ablate, compare, replace_all, train
from LookupMul.exceptions import LookupMulError
from LookupMul.utils.logger import logger

COMMANDS = (train, ablate, replace_all, compare)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lookupmul",
        description="Replace dense MLP layers with lookup-table matrix multiplication")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one subcommand and return its exit code.

    Usage errors leave through argparse with status 2.
    """
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except LookupMulError as err:
        logger.error(f"{type(err).__name__}: {err.message}")
        return err.exit_code
    except KeyboardInterrupt:
        return 130
    except Exception:
        logger.error(traceback.format_exc())
        return 1
