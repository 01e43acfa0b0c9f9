import argparse
import logging
import torch

from torchvision.utils import save_image

from ..data.checkpoint import export_dataset
from ..models import build
from ..rng import Rng
from ..surrogates import make_surrogate
from ..trainer import TRAINING_STREAM, augment_event, pretrain
from .common import add_config_arguments, load_model, load_train_dataset, resolve_run


logger = logging.getLogger(__name__)

PREVIEW_STREAM = 7


def add_arguments(parser: argparse.ArgumentParser) -> None:
    add_config_arguments(parser)
    parser.add_argument("--checkpoint", help="model to attack (default: pretrain one for N_pre epochs)")
    parser.add_argument("--count", type=int, default=16, help="number of source images to perturb")


def run_augment_preview(args: argparse.Namespace) -> int:
    """Run one augmentation event on the first `--count` training images and export
    sources and generated images to `preview.bin`, with the attributes in `preview.json`
    and a source-over-generated grid in `preview.png`.
    """
    config, output_dir = resolve_run(args)
    dataset = load_train_dataset(config)

    if args.checkpoint:
        model, _ = load_model(config, args.checkpoint)
    else:
        model = build(config.architecture, config.seed)
        pretrain(model, dataset, config, Rng(config.seed).spawn(TRAINING_STREAM))

    surrogate = make_surrogate(config.surrogate, dataset.image_shape)
    store = dataset.subset(torch.arange(min(args.count, len(dataset))))

    model.eval()
    batch = augment_event(
        model,
        store,
        surrogate,
        config.model_copy(update={"T_aug": 1.0}),
        Rng(config.seed).spawn(PREVIEW_STREAM),
    )

    if batch.event.n_generated:
        # sources on the top row, their generated images below
        grid = torch.cat([store.images[batch.source_indices], batch.images]).float()
        save_image(grid, output_dir / "preview.png", nrow=len(batch.images))

    sidecar = export_dataset(
        store,
        output_dir / "preview.bin",
        extra={
            "surrogate": surrogate.id,
            "alpha": batch.alpha.tolist() if batch.alpha is not None else [],
            "source_indices": batch.source_indices.tolist(),
            "event": batch.event.model_dump(mode="json"),
        },
    )
    logger.info(f"Wrote {batch.event.n_generated} generated images next to their sources, manifest {sidecar}")

    return 0
