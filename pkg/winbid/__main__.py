# Copyright 2023 The winbid Authors
# SPDX-License-Identifier: Apache-2
"""
The entrypoint into winbid.
"""
import logging
import sys
from argparse import ArgumentParser

from . import detect, diagnose, estimate, recover, simulate
from .common import WinbidException, __version__

log = logging.getLogger(__name__)

IO_EXIT_CODE = 4


def setup_cli():
    """
    Build the argparser with its subparsers.

    The modules with commands to add must specify a setup_parser function
    that takes in the subparsers object from `argparse.add_subparsers()`

    :return: The fully setup argument parser
    :rtype: ``argparse.ArgumentParser``
    """
    argparser = ArgumentParser(
        prog="winbid",
        description="First price auctions from winning bids",
    )
    argparser.add_argument("--version", action="version", version=__version__)
    argparser.add_argument(
        "--log-level",
        default="WARNING",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="Logging level [default: %(default)s]",
    )
    subparsers = argparser.add_subparsers()

    modules_to_setup = [
        simulate,
        detect,
        estimate,
        recover,
        diagnose,
    ]
    for mod in modules_to_setup:
        mod.setup_parser(subparsers)

    return argparser


def main(argv=None):
    """
    Run the winbid cli and dispatch to subcommands.
    """
    parser = setup_cli()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if not hasattr(args, "func"):
        parser.print_help()
        parser.exit(1, "\nNo subcommand given...\n\n")
    try:
        args.func(args)
    except WinbidException as exc:
        log.error("%s", exc)
        sys.exit(exc.exit_code)
    except OSError as exc:
        log.error("%s", exc)
        sys.exit(IO_EXIT_CODE)


if __name__ == "__main__":
    main()
