import argparse
import logging

from ..bench import evaluate, write_report
from ..config import fingerprint
from ..models import build
from ..surrogates import make_surrogate
from ..trainer import train_agat, train_baseline, write_train_log
from .common import add_config_arguments, has_test_dataset, load_test_dataset, load_train_dataset, resolve_run


logger = logging.getLogger(__name__)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_config_arguments(parser)
    parser.add_argument("--resume", metavar="CHECKPOINT", help="continue a run from one of its checkpoints")


def run_train(args: argparse.Namespace) -> int:
    """Train a model with AGAT or one of the baselines.

    Writes `resolved.cfg`, checkpoints every `N_aug` epochs, `final.bin`, the
    train log as CSV and JSON, and the clean test accuracy when a test set is configured.
    """
    config, output_dir = resolve_run(args)
    run_fingerprint = fingerprint(config)

    dataset = load_train_dataset(config)
    model = build(config.architecture, config.seed)

    if config.mode == "agat":
        surrogate = make_surrogate(config.surrogate, dataset.image_shape)
        model, log = train_agat(model, dataset, surrogate, config, run_fingerprint, output_dir, resume=args.resume)
    else:
        model, log = train_baseline(model, dataset, config, config.mode, run_fingerprint, output_dir, resume=args.resume)

    write_train_log(log, output_dir)

    if has_test_dataset(config):
        report = evaluate(model, load_test_dataset(config), "clean", run_fingerprint, config.seed)
        write_report(report, output_dir, name="clean")

    logger.info(f"Run {run_fingerprint[:12]} written to {output_dir}")

    return 0
