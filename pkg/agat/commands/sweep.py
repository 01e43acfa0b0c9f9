import argparse
import logging

from ..bench import severity_sweep, write_sweep
from ..errors import ConfigError
from .common import add_config_arguments, load_model, load_test_dataset, resolve_run


logger = logging.getLogger(__name__)

DEFAULT_LEVELS = {
    "R": [0, 10, 20, 30, 40, 50, 60],
    "T": [0, 2, 4, 6, 8, 10, 12],
    "S": [0, 0.1, 0.2, 0.3, 0.4],
}


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_config_arguments(parser)
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--axis", choices=sorted(DEFAULT_LEVELS), default="T")
    parser.add_argument("--levels", help="comma-separated, non-decreasing (R: degrees, T: pixels, S: 1 +- level)")


def parse_levels(value: str) -> list[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--levels: {e}") from e


def run_sweep(args: argparse.Namespace) -> int:
    """Accuracy against one RTS axis at increasing severity, written to `sweep-<axis>.csv`."""
    config, output_dir = resolve_run(args)
    levels = parse_levels(args.levels) if args.levels else DEFAULT_LEVELS[args.axis]

    model, _ = load_model(config, args.checkpoint)
    rows = severity_sweep(model, load_test_dataset(config), args.axis, levels, config.seed)

    path = write_sweep(rows, output_dir / f"sweep-{args.axis}.csv")
    logger.info(f"Wrote {path}")

    return 0
