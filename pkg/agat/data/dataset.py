import hashlib
import logging
import torch

from ..errors import DataError
from ..rng import Rng


logger = logging.getLogger(__name__)


class LabeledDataset:
    """Images in [0, 1] with integer labels and a source/generated flag per sample.

    Source samples are fixed at construction. `append_generated` only ever adds
    rows, and always by building new tensors, so a `snapshot()` taken earlier
    keeps seeing the dataset as it was.
    """

    def __init__(
        self,
        images: torch.Tensor,
        labels: torch.Tensor,
        num_classes: int,
        generated: torch.Tensor | None = None,
        attributes: torch.Tensor | None = None,
        meta: list[dict] | None = None,
    ):
        images = torch.as_tensor(images, dtype=torch.float64)
        labels = torch.as_tensor(labels).long()

        if images.dim() != 4:
            raise DataError(f"images must be [N, C, H, W], got {tuple(images.shape)}")
        if labels.shape != (images.shape[0],):
            raise DataError(f"{labels.numel()} labels for {images.shape[0]} images")
        if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
            raise DataError(f"labels must lie in [0, {num_classes})")

        n = images.shape[0]

        if generated is None:
            generated = torch.zeros(n, dtype=torch.bool)
        generated = torch.as_tensor(generated, dtype=torch.bool)
        if generated.shape != (n,):
            raise DataError(f"{generated.numel()} provenance flags for {n} images")

        if attributes is not None:
            attributes = torch.as_tensor(attributes, dtype=torch.float64)
            if attributes.dim() != 2 or attributes.shape[0] != n:
                raise DataError(f"attributes must be [{n}, d], got {tuple(attributes.shape)}")

        if meta is not None and len(meta) != n:
            raise DataError(f"{len(meta)} metadata records for {n} images")

        self.images = images.clamp(0.0, 1.0)
        self.labels = labels
        self.generated = generated
        self.attributes = attributes
        self.meta = meta
        self.num_classes = num_classes

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def source_count(self) -> int:
        return int((~self.generated).sum())

    @property
    def generated_count(self) -> int:
        return int(self.generated.sum())

    def append_generated(
        self,
        images: torch.Tensor,
        labels: torch.Tensor,
        attributes: torch.Tensor | None = None,
    ) -> "LabeledDataset":
        images = torch.as_tensor(images, dtype=torch.float64)
        labels = torch.as_tensor(labels).long().reshape(-1)

        if images.shape[0] == 0 and labels.numel() == 0:
            return self

        if images.dim() != 4 or tuple(images.shape[1:]) != self.image_shape:
            raise DataError(f"generated images {tuple(images.shape)} do not match {self.image_shape}")
        if labels.numel() != images.shape[0]:
            raise DataError(f"{labels.numel()} labels for {images.shape[0]} generated images")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DataError(f"generated labels must lie in [0, {self.num_classes})")

        k = images.shape[0]

        if attributes is not None or self.attributes is not None:
            width = (attributes if attributes is not None else self.attributes).shape[-1]
            old = self.attributes
            if old is None:
                old = torch.full((len(self), width), float("nan"), dtype=torch.float64)
            new = attributes
            if new is None:
                new = torch.full((k, width), float("nan"), dtype=torch.float64)
            new = torch.as_tensor(new, dtype=torch.float64).reshape(k, -1)
            if new.shape[1] != old.shape[1]:
                raise DataError(f"attribute width {new.shape[1]} does not match {old.shape[1]}")
            self.attributes = torch.cat([old, new])

        if self.meta is not None:
            self.meta = self.meta + [{"generated": True} for _ in range(k)]

        self.images = torch.cat([self.images, images.detach().clamp(0.0, 1.0)])
        self.labels = torch.cat([self.labels, labels])
        self.generated = torch.cat([self.generated, torch.ones(k, dtype=torch.bool)])

        logger.debug(f"Appended {k} generated samples, store size {len(self)}")

        return self

    def snapshot(self) -> "LabeledDataset":
        snap = LabeledDataset.__new__(LabeledDataset)
        snap.images = self.images
        snap.labels = self.labels
        snap.generated = self.generated
        snap.attributes = self.attributes
        snap.meta = None if self.meta is None else list(self.meta)
        snap.num_classes = self.num_classes
        return snap

    def subset(self, indices) -> "LabeledDataset":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return LabeledDataset(
            self.images[idx],
            self.labels[idx],
            self.num_classes,
            generated=self.generated[idx],
            attributes=None if self.attributes is None else self.attributes[idx],
            meta=None if self.meta is None else [self.meta[i] for i in idx.tolist()],
        )

    def generated_slice(self) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
        mask = self.generated
        return (
            self.images[mask],
            self.labels[mask],
            None if self.attributes is None else self.attributes[mask],
        )

    def fingerprint(self, start: int = 0, stop: int | None = None) -> str:
        """SHA-1 over images, labels and provenance of rows [start, stop)."""
        sha1 = hashlib.sha1()
        sha1.update(self.images[start:stop].contiguous().numpy().tobytes())
        sha1.update(self.labels[start:stop].contiguous().numpy().tobytes())
        sha1.update(self.generated[start:stop].contiguous().numpy().tobytes())
        return sha1.hexdigest()


def batches(dataset: LabeledDataset, batch_size: int, rng: Rng | None = None):
    """Yield (images, labels, indices) batches; shuffled when an rng is given.

    Generated and source samples are shuffled together uniformly.
    """
    n = len(dataset)
    order = torch.from_numpy(rng.permutation(n)) if rng is not None else torch.arange(n)

    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx], idx


def batch_count(dataset: LabeledDataset, batch_size: int) -> int:
    return (len(dataset) + batch_size - 1) // batch_size
