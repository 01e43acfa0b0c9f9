"""Readers for the IDX digit files and the CIFAR-10 binary batches."""

import gzip
import logging
import math
import numpy as np
import struct
import torch

from pathlib import Path

from ..errors import DataError
from .dataset import LabeledDataset


logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 3 * 32 * 32
NUM_CLASSES = 10


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e

    if data[:2] == b"\x1f\x8b":
        try:
            data = gzip.decompress(data)
        except (OSError, EOFError) as e:
            raise DataError(f"{path}: corrupt gzip stream: {e}") from e

    return data


def _read_idx(path: str | Path, magic: int, ndims: int) -> np.ndarray:
    data = _read_bytes(path)

    header_len = 4 * (1 + ndims)
    if len(data) < header_len:
        raise DataError(f"{path}: truncated header")

    found, *dims = struct.unpack(f">I{ndims}I", data[:header_len])
    if found != magic:
        raise DataError(f"{path}: bad magic {found}, expected {magic}")

    expected = math.prod(dims)
    body = data[header_len:]
    if len(body) < expected:
        raise DataError(f"{path}: truncated, {len(body)} of {expected} bytes present")
    if len(body) > expected:
        raise DataError(f"{path}: {len(body) - expected} unexpected trailing bytes")

    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path: str | Path, labels_path: str | Path, max_n: int | None = None) -> LabeledDataset:
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)

    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    if labels.size and labels.max() >= NUM_CLASSES:
        raise DataError(f"{labels_path}: label {labels.max()} out of range")

    if max_n is not None:
        images, labels = images[:max_n], labels[:max_n]

    pixels = torch.from_numpy(images.astype(np.float64) / 255.0).unsqueeze(1)
    logger.info(f"Loaded {pixels.shape[0]} IDX images from {images_path}")

    return LabeledDataset(pixels, torch.from_numpy(labels.astype(np.int64)), NUM_CLASSES)


def load_cifar_binary(path: str | Path | list, max_n: int | None = None) -> LabeledDataset:
    """Read one or more CIFAR-10 binary batch files, keeping the first `max_n` records."""
    paths = path if isinstance(path, (list, tuple)) else [path]

    chunks = []
    remaining = max_n
    for p in paths:
        if remaining is not None and remaining <= 0:
            break

        data = _read_bytes(p)
        if len(data) == 0 or len(data) % CIFAR_RECORD:
            raise DataError(f"{p}: {len(data)} bytes is not a whole number of {CIFAR_RECORD}-byte records")

        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        if remaining is not None:
            records = records[:remaining]
            remaining -= records.shape[0]

        if records[:, 0].max() >= NUM_CLASSES:
            raise DataError(f"{p}: label {records[:, 0].max()} out of range")

        chunks.append(records)

    records = np.concatenate(chunks)
    labels = torch.from_numpy(records[:, 0].astype(np.int64))
    pixels = torch.from_numpy(records[:, 1:].astype(np.float64) / 255.0).reshape(-1, 3, 32, 32)
    logger.info(f"Loaded {pixels.shape[0]} CIFAR records")

    return LabeledDataset(pixels, labels, NUM_CLASSES)
