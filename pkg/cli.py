#!/usr/bin/env python3
import argparse
import logging
import sys

from gdt_libs import synthetic_groups, trainer
from gdt_libs.errors import GDTError, UsageError

TOOLS = {
    "train": trainer.train_cli,
    "finetune": trainer.finetune_cli,
    "sample": trainer.sample_cli,
    "eval": trainer.eval_cli,
    "inspect": trainer.inspect_cli,
    "ablation": trainer.ablation_cli,
    "data": synthetic_groups.main_cli,
}


def setup_logging(verbose: bool = False, log_file: str = "gdt.log"):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=trainer.LOG_FORMAT,
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout),
        ],
    )


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="gdt",
        description="Group Diffusion Transformer toolkit"
    )
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level")
    parser.add_argument(
        "tool",
        help="Tool to run (" + ", ".join(TOOLS) + ")"
    )
    parser.add_argument(
        "args",
        nargs=argparse.REMAINDER,
        help="Arguments for the selected tool"
    )

    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    logger = logging.getLogger("gdt")

    if args.tool not in TOOLS:
        print(f"Unknown tool: {args.tool}")
        parser.print_help()
        sys.exit(2)
    try:
        TOOLS[args.tool](args.args)
    except UsageError as e:
        logger.error(str(e))
        parser.print_help()
        sys.exit(2)
    except GDTError as e:
        logger.error(f"{type(e).__name__}: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
