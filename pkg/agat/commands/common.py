"""Plumbing shared by the CLI verbs: config resolution, output directories,
dataset loading and checkpoint restoring.
"""

import argparse
import logging

from pathlib import Path

from ..config import RunConfig, Settings, fingerprint, parse_config, write_resolved
from ..data.checkpoint import load_checkpoint
from ..data.dataset import LabeledDataset
from ..data.loaders import load_cifar_binary, load_idx
from ..data.shapes import generate_shapes_dataset
from ..errors import ConfigError, DataError
from ..models import Classifier, build, load_state


logger = logging.getLogger(__name__)

TEST_STREAM = 1


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    parser.add_argument("--output", help="output directory (default: $AGAT_OUTPUT_ROOT/<config fingerprint>)")


def resolve_run(args: argparse.Namespace) -> tuple[RunConfig, Path]:
    """Parse the config, pick the output directory and write `resolved.cfg` into it."""
    config = parse_config(args.config, args.overrides)

    if args.output:
        output_dir = Path(args.output)
    elif config.output_dir:
        output_dir = Path(config.output_dir)
    else:
        output_dir = Path(Settings().output_root) / fingerprint(config)[:12]

    output_dir.mkdir(parents=True, exist_ok=True)
    config = config.model_copy(update={"output_dir": str(output_dir)})
    write_resolved(config, output_dir)

    return config, output_dir


def _require(config: RunConfig, *keys: str) -> list[str]:
    values = [getattr(config, key) for key in keys]
    missing = [key for key, value in zip(keys, values) if not value]
    if missing:
        raise ConfigError(f"dataset {config.dataset} needs {', '.join(missing)}")
    return values


def _cifar_paths(value: str) -> list[str]:
    return [p.strip() for p in value.split(",") if p.strip()]


def load_train_dataset(config: RunConfig) -> LabeledDataset:
    if config.dataset == "mnist":
        images, labels = _require(config, "train_images", "train_labels")
        return load_idx(images, labels, max_n=config.max_train)
    if config.dataset == "cifar":
        (paths,) = _require(config, "cifar_train")
        return load_cifar_binary(_cifar_paths(paths), max_n=config.max_train)
    return generate_shapes_dataset(config.shapes_train_n, config.split_rule, config.seed)


def load_test_dataset(config: RunConfig) -> LabeledDataset:
    if config.dataset == "mnist":
        images, labels = _require(config, "test_images", "test_labels")
        return load_idx(images, labels, max_n=config.max_test)
    if config.dataset == "cifar":
        (paths,) = _require(config, "cifar_test")
        return load_cifar_binary(_cifar_paths(paths), max_n=config.max_test)
    return generate_shapes_dataset(config.shapes_test_n, config.test_split_rule, config.seed + TEST_STREAM)


def has_test_dataset(config: RunConfig) -> bool:
    if config.dataset == "mnist":
        return bool(config.test_images and config.test_labels)
    if config.dataset == "cifar":
        return bool(config.cifar_test)
    return True


def load_model(config: RunConfig, checkpoint_path: str | Path) -> tuple[Classifier, str]:
    """The configured architecture with the checkpoint's parameters, and the checkpoint's config fingerprint."""
    ckpt = load_checkpoint(checkpoint_path, expected_fingerprint=fingerprint(config))

    architecture = ckpt.meta.get("architecture")
    if architecture != config.architecture:
        raise DataError(f"checkpoint {checkpoint_path} holds a {architecture} model, config expects {config.architecture}")

    model = build(config.architecture, config.seed)
    load_state(model, ckpt.tensors)
    model.eval()

    return model, ckpt.fingerprint


def parse_assertions(items: list[str]) -> dict[str, float]:
    known = {"min_gap", "max_clean_drop"}
    thresholds = {}
    for item in items:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or key not in known:
            raise ConfigError(f"--assert expects min_gap=G or max_clean_drop=D, got '{item}'")
        try:
            thresholds[key] = float(value)
        except ValueError as e:
            raise ConfigError(f"--assert {key}: '{value}' is not a number") from e
    return thresholds
