import argparse
import logging

from ..bench import (
    compare_reports,
    corruption_report,
    evaluate,
    read_report,
    rts_report,
    shapes_split_eval,
    write_report,
)
from ..errors import ConfigError
from .common import (
    TEST_STREAM,
    add_config_arguments,
    load_model,
    load_test_dataset,
    parse_assertions,
    resolve_run,
)


logger = logging.getLogger(__name__)

MODES = ("rts", "corruption", "shapes", "clean")


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_config_arguments(parser)
    parser.add_argument("--checkpoint", required=True, help="checkpoint written by train")
    parser.add_argument("--mode", choices=MODES, default="rts")
    parser.add_argument("--severity", type=int, default=5, help="corruption severity 1..5")
    parser.add_argument(
        "--assert",
        dest="assertions",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="min_gap=G or max_clean_drop=D, checked against --against",
    )
    parser.add_argument("--against", metavar="REPORT", help="baseline report JSON for --assert")


def run_eval(args: argparse.Namespace) -> int:
    """Evaluate a checkpoint on the RTS, corruption, shapes-split or clean test set.

    Writes `eval-<mode>.json` and `eval-<mode>.csv`. With `--assert` the exit
    code is 1 when a threshold against the `--against` report fails.
    """
    thresholds = parse_assertions(args.assertions)
    if thresholds and not args.against:
        raise ConfigError("--assert needs a baseline report given with --against")

    config, output_dir = resolve_run(args)
    model, ckpt_fingerprint = load_model(config, args.checkpoint)

    if args.mode == "shapes":
        if config.dataset != "shapes":
            raise ConfigError(f"--mode shapes needs the shapes dataset, config has {config.dataset}")
        report = shapes_split_eval(
            model,
            config.test_split_rule,
            config.shapes_test_n,
            config.seed + TEST_STREAM,
            trained_on=config.split_rule,
            fingerprint=ckpt_fingerprint,
        )
    else:
        test = load_test_dataset(config)
        if args.mode == "rts":
            report = rts_report(model, test, config.seed, ckpt_fingerprint)
        elif args.mode == "corruption":
            report = corruption_report(model, test, args.severity, config.seed, ckpt_fingerprint)
        else:
            report = evaluate(model, test, "clean", ckpt_fingerprint, config.seed)

    write_report(report, output_dir, name=f"eval-{args.mode}")

    if not thresholds:
        return 0

    failures = compare_reports(report, read_report(args.against), **thresholds)
    for failure in failures:
        logger.error(f"Assertion failed: {failure}")
    if failures:
        return 1

    logger.info("All assertions hold")
    return 0
