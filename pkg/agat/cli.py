import dotenv

dotenv.load_dotenv()

import argparse
import logging
import sys
import torch

from typing import Callable

from .commands import augment_preview, dump_checkpoint, evaluate, gradcheck, sweep, train
from .config import Settings
from .errors import AgatError


logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def add_command(
    subparsers,
    verb: str,
    handler: Callable[[argparse.Namespace], int],
    add_arguments: Callable[[argparse.ArgumentParser], None],
    summary: str,
) -> None:
    parser = subparsers.add_parser(verb, help=summary, description=handler.__doc__)
    add_arguments(parser)
    parser.set_defaults(handler=handler)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agat", description="Attribute-guided adversarial training toolkit.")
    subparsers = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    add_command(
        subparsers,
        verb="train",
        handler=train.run_train,
        add_arguments=train.add_arguments,
        summary="Train with AGAT or a baseline.",
    )

    add_command(
        subparsers,
        verb="eval",
        handler=evaluate.run_eval,
        add_arguments=evaluate.add_arguments,
        summary="Evaluate a checkpoint on a robustness benchmark.",
    )

    add_command(
        subparsers,
        verb="sweep",
        handler=sweep.run_sweep,
        add_arguments=sweep.add_arguments,
        summary="Accuracy against one RTS axis at increasing severity.",
    )

    add_command(
        subparsers,
        verb="augment-preview",
        handler=augment_preview.run_augment_preview,
        add_arguments=augment_preview.add_arguments,
        summary="Export one augmentation event's generated images.",
    )

    add_command(
        subparsers,
        verb="gradcheck",
        handler=gradcheck.run_gradcheck,
        add_arguments=gradcheck.add_arguments,
        summary="Check every gradient against finite differences.",
    )

    add_command(
        subparsers,
        verb="dump-checkpoint",
        handler=dump_checkpoint.run_dump_checkpoint,
        add_arguments=dump_checkpoint.add_arguments,
        summary="Print a checkpoint or dataset export in a diffable form.",
    )

    return parser


def configure(settings: Settings) -> None:
    logging.basicConfig(level=settings.log_level.upper(), format=LOG_FORMAT)
    torch.set_default_dtype(torch.float64)
    torch.use_deterministic_algorithms(True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # usage errors are configuration errors
        return 0 if e.code == 0 else 2

    configure(Settings())

    try:
        return args.handler(args)
    except AgatError as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
