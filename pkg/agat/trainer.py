"""Attribute-guided adversarial training and the baselines it is compared to.

A run alternates three kinds of epoch:

- pre-training epochs (1..N_pre): SGD on the source samples
- augmentation epochs (n > N_pre, n mod N_aug == 0): no parameter update;
  sampled source images are pushed through the surrogate with attributes
  optimized against the frozen classifier, and the results join the store
- training epochs: SGD over the store (source plus everything generated)
"""

import csv
import json
import logging
import math
import time
import torch

from dataclasses import dataclass
from pathlib import Path

from .config import AgatConfig, PgdConfig
from .data.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data.dataset import LabeledDataset, batches
from .errors import AugmentationAborted, ConfigError, DataError, TrainingAbort
from .losses import l_agat, l_ce, l_cls_agat_logits, l_const, one_hot
from .metrics import MetricLogger, SmoothedValue
from .models import Classifier, load_state, state_tensors
from .rng import Rng
from .surrogates import AttributeVector, Surrogate
from .types import AugmentationEvent, EpochRecord, TrainLog


logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0
PRINT_FREQ = 50
TRAINING_STREAM = 100


@dataclass
class GeneratedBatch:
    images: torch.Tensor
    labels: torch.Tensor
    alpha: torch.Tensor | None
    source_indices: torch.Tensor
    event: AugmentationEvent


def sample_sources(store: LabeledDataset, fraction: float, rng: Rng) -> torch.Tensor:
    """floor(fraction * |source|) distinct source rows of the store, in draw order."""
    source_idx = torch.nonzero(~store.generated).flatten()
    k = math.floor(fraction * len(source_idx))
    if k == 0:
        return torch.zeros(0, dtype=torch.long)
    return source_idx[torch.from_numpy(rng.choice(len(source_idx), k, replace=False))]


class TrainingRun:
    """The mutable state of one run: model, optimizer, store, generator and log."""

    def __init__(
        self,
        model: Classifier,
        dataset: LabeledDataset,
        config: AgatConfig,
        mode: str = "agat",
        surrogate_id: str | None = None,
        fingerprint: str = "",
        output_dir: str | Path | None = None,
        rng: Rng | None = None,
    ):
        self.model = model
        # the caller's dataset never sees generated samples
        self.store = dataset.snapshot()
        self.config = config
        self.optimizer = torch.optim.SGD(model.parameters(), lr=config.eta)
        self.rng = rng if rng is not None else Rng(config.seed).spawn(TRAINING_STREAM)
        self.log = TrainLog(mode=mode, surrogate=surrogate_id, seed=config.seed, fingerprint=fingerprint)
        self.output_dir = Path(output_dir) if output_dir is not None else None
        self.first_loss: float | None = None
        self.start_epoch = 1
        self.started = time.time()

    def fit_epoch(self, epoch: int, phase: str) -> EpochRecord:
        model = self.model
        model.train()

        metric_logger = MetricLogger(delimiter="  ")
        metric_logger.add_meter("lr", SmoothedValue(window_size=1, fmt="{value:.6f}"))
        header = f"Epoch: [{epoch}]"

        total_loss = 0.0
        correct = 0
        seen = 0

        for images, labels, _ in metric_logger.log_every(
            list(batches(self.store, self.config.batch_size, self.rng)), PRINT_FREQ, header
        ):
            _, logits = model(images)
            loss = l_ce(labels, logits)

            loss_value = loss.item()
            if not math.isfinite(loss_value):
                raise TrainingAbort(f"epoch {epoch}: loss is {loss_value}, stopping training")

            self.optimizer.zero_grad()
            loss.backward()
            self.optimizer.step()

            n = labels.shape[0]
            hits = int((logits.argmax(dim=1) == labels).sum())
            total_loss += loss_value * n
            correct += hits
            seen += n

            metric_logger.update(loss=loss_value, acc=100.0 * hits / n, n=n)
            metric_logger.update(lr=self.optimizer.param_groups[0]["lr"])

        mean_loss = total_loss / seen
        accuracy = 100.0 * correct / seen

        if epoch == 1 or self.first_loss is None:
            self.first_loss = mean_loss
        elif phase == "pretrain" and mean_loss > DIVERGENCE_FACTOR * self.first_loss:
            raise TrainingAbort(
                f"epoch {epoch}: mean loss {mean_loss:.4g} exceeds {DIVERGENCE_FACTOR:g}x "
                f"the first epoch's {self.first_loss:.4g}; lower eta"
            )

        record = EpochRecord(
            epoch=epoch,
            phase=phase,
            mean_loss=mean_loss,
            train_accuracy=accuracy,
            store_size=len(self.store),
        )
        self.log.epochs.append(record)

        logger.info(f"Epoch {epoch} ({phase}): loss {mean_loss:.4f}, accuracy {accuracy:.2f}%, store {len(self.store)}")

        return record

    def record_event(self, event: AugmentationEvent) -> None:
        self.log.events.append(event)
        self.log.epochs.append(EpochRecord(epoch=event.epoch, phase="augment", store_size=len(self.store)))

    def checkpoint(self, epoch: int, name: str | None = None) -> Path | None:
        if self.output_dir is None:
            return None

        images, labels, attributes = self.store.generated_slice()
        tensors = {
            **state_tensors(self.model),
            "store.images": images,
            "store.labels": labels.to(torch.float64),
        }
        if attributes is not None:
            tensors["store.attributes"] = attributes

        path = self.output_dir / (name or f"checkpoint-{epoch:04d}.bin")
        save_checkpoint(
            Checkpoint(
                tensors=tensors,
                epoch=epoch,
                rng_state=self.rng.get_state(),
                fingerprint=self.log.fingerprint,
                meta={
                    "architecture": self.model.architecture,
                    "mode": self.log.mode,
                    "surrogate": self.log.surrogate,
                    "first_loss": self.first_loss,
                    "log": self.log.model_dump(mode="json"),
                },
            ),
            path,
        )
        return path

    def resume(self, path: str | Path) -> None:
        """Continue after the checkpoint's epoch with its parameters, generator and store."""
        ckpt = load_checkpoint(path, expected_fingerprint=self.log.fingerprint)

        architecture = ckpt.meta.get("architecture")
        if architecture != self.model.architecture:
            raise DataError(f"checkpoint {path} holds a {architecture} model, not {self.model.architecture}")
        if ckpt.rng_state is None:
            raise DataError(f"checkpoint {path} has no generator state to resume from")

        load_state(self.model, ckpt.tensors)

        if "store.images" in ckpt.tensors:
            self.store.append_generated(
                ckpt.tensors["store.images"],
                ckpt.tensors["store.labels"].long(),
                ckpt.tensors.get("store.attributes"),
            )

        self.rng = Rng.from_state(ckpt.rng_state)
        self.first_loss = ckpt.meta.get("first_loss")
        if "log" in ckpt.meta:
            saved = TrainLog.model_validate(ckpt.meta["log"])
            self.log.epochs = saved.epochs
            self.log.events = saved.events
        self.start_epoch = ckpt.epoch + 1

        logger.info(f"Resuming from {path} at epoch {self.start_epoch}, store size {len(self.store)}")

    def finish(self) -> TrainLog:
        self.checkpoint(self.config.N_epochs, name="final.bin")
        self.log.wall_time = time.time() - self.started
        logger.info(f"Training finished in {self.log.wall_time:.1f} s")
        return self.log

    def after_epoch(self, epoch: int) -> None:
        if epoch % self.config.N_aug == 0 and epoch != self.config.N_epochs:
            self.checkpoint(epoch)


def pretrain(model: Classifier, dataset: LabeledDataset, config: AgatConfig, rng: Rng | None = None) -> Classifier:
    """N_pre epochs of SGD on l_ce over shuffled source batches."""
    run = TrainingRun(model, dataset, config, mode="pretrain", rng=rng)
    for epoch in range(1, config.N_pre + 1):
        run.fit_epoch(epoch, "pretrain")
    return model


def _attribute_losses(model, surrogate, x, alpha, alpha_source, z, y_onehot, y_hat, context, config):
    x_gen = surrogate.apply(x, alpha, **context)
    z_gen, logits_gen = model(x_gen)
    cls = l_cls_agat_logits(y_onehot, y_hat, logits_gen, consistency=config.consistency, reduction="none")
    const = l_const(z, z_gen, alpha_source, alpha, config.weights, reduction="none")
    return x_gen, cls, const


def augment_event(
    model: Classifier,
    store: LabeledDataset,
    surrogate: Surrogate,
    config: AgatConfig,
    rng: Rng,
    epoch: int = 0,
) -> GeneratedBatch:
    """Generate floor(T_aug * |source|) samples and append them to the store.

    Each sample's attributes start from the surrogate's initialization and
    take M steps of size mu along the gradient of the chunk-mean objective
    l_cls - beta * l_const (descent), or -l_cls - beta * l_const when
    `inner_sign` is "ascent". Attributes are projected onto the surrogate's
    bounds after every step. Generated samples keep their source labels.
    """
    indices = sample_sources(store, config.T_aug, rng)
    if len(indices) == 0:
        logger.info(f"Epoch {epoch}: T_aug selects no samples, nothing to generate")
        event = AugmentationEvent(epoch=epoch, n_generated=0, initial_cls=0.0, final_cls=0.0)
        return GeneratedBatch(store.images[:0], store.labels[:0], None, indices, event)

    weights = config.weights
    sign = 1.0 if config.inner_sign == "descent" else -1.0

    images, alphas = [], []
    initial_cls, final_cls, initial_const, final_const = [], [], [], []

    for start in range(0, len(indices), config.batch_size):
        idx = indices[start : start + config.batch_size]
        x = store.images[idx]
        y = store.labels[idx]

        alpha_source = surrogate.source_alpha(store, idx)
        alpha = surrogate.init_alpha(alpha_source, rng).values
        context = surrogate.context(x, y, rng)

        with torch.no_grad():
            z, logits = model(x)
            y_hat = torch.softmax(logits, dim=1)
        y_onehot = one_hot(y, model.num_classes)

        def losses(a):
            return _attribute_losses(model, surrogate, x, a, alpha_source, z, y_onehot, y_hat, context, config)

        with torch.no_grad():
            _, cls0, const0 = losses(alpha)

        for step in range(config.M):
            alpha = alpha.detach().requires_grad_(True)
            _, cls, const = losses(alpha)

            objective = l_agat(sign * cls, const, weights.beta)
            total = objective.mean()
            if not torch.isfinite(total):
                raise AugmentationAborted(
                    f"epoch {epoch}: attribute objective is {total.item()} at inner step {step + 1} "
                    f"({surrogate.id}, samples {idx[:4].tolist()}...)"
                )

            (grad,) = torch.autograd.grad(total, alpha)
            alpha = surrogate.project(alpha.detach() - config.mu * grad)

            if not AttributeVector(alpha, surrogate.lower, surrogate.upper, surrogate.id).in_bounds():
                raise AugmentationAborted(f"epoch {epoch}: attributes left their bounds at inner step {step + 1}")

        with torch.no_grad():
            x_gen, cls1, const1 = losses(alpha)

        images.append(x_gen.detach())
        alphas.append(alpha.detach())
        initial_cls.append(cls0)
        final_cls.append(cls1)
        initial_const.append(const0)
        final_const.append(const1)

    images = torch.cat(images)
    alpha = torch.cat(alphas)
    labels = store.labels[indices]
    const0, const1 = torch.cat(initial_const), torch.cat(final_const)

    event = AugmentationEvent(
        epoch=epoch,
        n_generated=len(indices),
        initial_cls=torch.cat(initial_cls).mean().item(),
        final_cls=torch.cat(final_cls).mean().item(),
        initial_const=const0.mean().item(),
        final_const=const1.mean().item(),
        const_increase_fraction=(const1 > const0).double().mean().item(),
    )

    store.append_generated(images, labels, alpha)

    logger.info(
        f"Epoch {epoch}: generated {event.n_generated} samples with {surrogate.id}, "
        f"l_cls {event.initial_cls:.4f} -> {event.final_cls:.4f}, "
        f"l_const {event.initial_const:.4f} -> {event.final_const:.4f} "
        f"(increased on {event.const_increase_fraction:.1%}), store {len(store)}"
    )

    return GeneratedBatch(images, labels, alpha, indices, event)


def train_agat(
    model: Classifier,
    dataset: LabeledDataset,
    surrogate: Surrogate,
    config: AgatConfig,
    fingerprint: str = "",
    output_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> tuple[Classifier, TrainLog]:
    run = TrainingRun(model, dataset, config, "agat", surrogate.id, fingerprint, output_dir)
    if resume is not None:
        run.resume(resume)

    events = set(config.augmentation_epochs())
    logger.info(f"AGAT with {surrogate.id}: {config.N_epochs} epochs, augmentation at epochs {sorted(events)}")

    for epoch in range(run.start_epoch, config.N_epochs + 1):
        if epoch <= config.N_pre:
            run.fit_epoch(epoch, "pretrain")
        elif epoch in events:
            model.eval()
            run.record_event(augment_event(model, run.store, surrogate, config, run.rng, epoch).event)
        else:
            run.fit_epoch(epoch, "train")
        run.after_epoch(epoch)

    return model, run.finish()


def pgd_augment(
    model: Classifier,
    x: torch.Tensor,
    y: torch.Tensor,
    pgd: PgdConfig,
    rng: Rng | None = None,
) -> torch.Tensor:
    """Sign-gradient ascent on l_ce inside the L-inf ball of radius epsilon, staying in [0, 1]."""
    x = x.detach()
    if pgd.epsilon == 0 or pgd.steps == 0:
        return x.clone()

    delta = torch.zeros_like(x)
    if pgd.random_start:
        rng = rng if rng is not None else Rng(pgd.seed)
        delta = rng.uniform(-pgd.epsilon, pgd.epsilon, tuple(x.shape))
        delta = (x + delta).clamp(0.0, 1.0) - x

    for _ in range(pgd.steps):
        delta = delta.detach().requires_grad_(True)
        _, logits = model(x + delta)
        (grad,) = torch.autograd.grad(l_ce(y, logits), delta)

        with torch.no_grad():
            delta = (delta + pgd.step * grad.sign()).clamp(-pgd.epsilon, pgd.epsilon)
            delta = (x + delta).clamp(0.0, 1.0) - x

    return (x + delta).detach()


def pgd_event(model: Classifier, store: LabeledDataset, config: AgatConfig, rng: Rng, epoch: int = 0) -> AugmentationEvent:
    indices = sample_sources(store, config.T_aug, rng)
    pgd = config.pgd

    images, clean_losses, adv_losses = [], [], []
    for start in range(0, len(indices), config.batch_size):
        idx = indices[start : start + config.batch_size]
        x, y = store.images[idx], store.labels[idx]

        x_adv = pgd_augment(model, x, y, pgd)
        with torch.no_grad():
            clean_losses.append(l_ce(y, model(x)[1], reduction="none"))
            adv_losses.append(l_ce(y, model(x_adv)[1], reduction="none"))
        images.append(x_adv)

    if not images:
        return AugmentationEvent(epoch=epoch, n_generated=0, initial_cls=0.0, final_cls=0.0)

    store.append_generated(torch.cat(images), store.labels[indices])

    event = AugmentationEvent(
        epoch=epoch,
        n_generated=len(indices),
        initial_cls=torch.cat(clean_losses).mean().item(),
        final_cls=torch.cat(adv_losses).mean().item(),
    )
    logger.info(
        f"Epoch {epoch}: {event.n_generated} PGD samples (eps {pgd.epsilon:.4g}), "
        f"l_ce {event.initial_cls:.4f} -> {event.final_cls:.4f}, store {len(store)}"
    )
    return event


def train_baseline(
    model: Classifier,
    dataset: LabeledDataset,
    config: AgatConfig,
    mode: str = "plain",
    fingerprint: str = "",
    output_dir: str | Path | None = None,
    resume: str | Path | None = None,
) -> tuple[Classifier, TrainLog]:
    """`plain`: N_epochs SGD epochs on the source set. `pgd-augment`: the AGAT
    schedule with each augmentation event replaced by PGD examples of the sampled sources.
    """
    if mode not in ("plain", "pgd-augment"):
        raise ConfigError(f"unknown baseline mode '{mode}'")

    pgd = config.pgd
    events: set[int] = set()
    if mode == "pgd-augment":
        if pgd.epsilon == 0 or pgd.steps == 0:
            logger.info("PGD radius or step count is zero; training the plain baseline")
        else:
            events = set(config.augmentation_epochs())

    run = TrainingRun(model, dataset, config, mode, None, fingerprint, output_dir)
    if resume is not None:
        run.resume(resume)

    for epoch in range(run.start_epoch, config.N_epochs + 1):
        if epoch <= config.N_pre:
            run.fit_epoch(epoch, "pretrain")
        elif epoch in events:
            model.eval()
            run.record_event(pgd_event(model, run.store, config, run.rng, epoch))
        else:
            run.fit_epoch(epoch, "train")
        run.after_epoch(epoch)

    return model, run.finish()


def write_train_log(log: TrainLog, output_dir: str | Path) -> tuple[Path, Path]:
    """One CSV row per epoch, and the full log (events included) as JSON."""
    output_dir = Path(output_dir)
    csv_path = output_dir / "train_log.csv"
    json_path = output_dir / "train_log.json"

    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "phase", "mean_loss", "train_accuracy", "store_size"])
        for e in log.epochs:
            writer.writerow(
                [
                    e.epoch,
                    e.phase,
                    "" if e.mean_loss is None else repr(e.mean_loss),
                    "" if e.train_accuracy is None else repr(e.train_accuracy),
                    e.store_size,
                ]
            )

    json_path.write_text(json.dumps(log.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")

    return csv_path, json_path
