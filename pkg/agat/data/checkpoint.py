"""Binary tensor container used for checkpoints and dataset exports.

Layout (little-endian):

    magic       8 bytes  b"AGATCKP1"
    header_len  u32
    header      header_len bytes of UTF-8 JSON
    count       u32
    count x:
        name_len  u32
        name      name_len bytes of UTF-8
        rank      u32
        dims      rank x u64
        data      prod(dims) x f64, row-major
"""

import json
import logging
import math
import numpy as np
import struct
import torch

from dataclasses import dataclass, field
from pathlib import Path

from ..errors import DataError
from .dataset import LabeledDataset


logger = logging.getLogger(__name__)

MAGIC = b"AGATCKP1"


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    epoch: int = 0
    rng_state: dict | None = None
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)


def write_container(path: str | Path, tensors: dict[str, torch.Tensor], header: dict) -> None:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    parts = [MAGIC, struct.pack("<I", len(header_bytes)), header_bytes, struct.pack("<I", len(tensors))]

    for name, tensor in tensors.items():
        name_bytes = name.encode("utf-8")
        data = tensor.detach().to(torch.float64).contiguous().numpy()
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}Q", *data.shape))
        parts.append(data.astype("<f8", copy=False).tobytes())

    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated container at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_container(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e

    reader = _Reader(data, path)

    if reader.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a tensor container (bad magic)")

    try:
        header = json.loads(reader.take(reader.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: unreadable header: {e}") from e

    tensors = {}
    for _ in range(reader.u32()):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        values = np.frombuffer(reader.take(8 * math.prod(dims)), dtype="<f8")
        tensors[name] = torch.from_numpy(values.reshape(dims).astype(np.float64))

    if reader.pos != len(data):
        raise DataError(f"{path}: {len(data) - reader.pos} trailing bytes after the last tensor")

    return header, tensors


def save_checkpoint(state: Checkpoint, path: str | Path) -> None:
    header = {
        "epoch": state.epoch,
        "rng_state": state.rng_state,
        "fingerprint": state.fingerprint,
        "meta": state.meta,
    }
    write_container(path, state.tensors, header)
    logger.info(f"Saved checkpoint {path} (epoch {state.epoch}, {len(state.tensors)} tensors)")


def load_checkpoint(path: str | Path, expected_fingerprint: str | None = None) -> Checkpoint:
    header, tensors = read_container(path)

    checkpoint = Checkpoint(
        tensors=tensors,
        epoch=int(header.get("epoch", 0)),
        rng_state=header.get("rng_state"),
        fingerprint=header.get("fingerprint", ""),
        meta=header.get("meta", {}),
    )

    if expected_fingerprint is not None and checkpoint.fingerprint != expected_fingerprint:
        logger.warning(
            f"Checkpoint {path} was written by config {checkpoint.fingerprint[:12]}, "
            f"current config is {expected_fingerprint[:12]}"
        )

    return checkpoint


def export_dataset(dataset: LabeledDataset, path: str | Path, extra: dict | None = None) -> Path:
    """Write the dataset as a container plus a JSON sidecar next to it; returns the sidecar path."""
    path = Path(path)

    tensors = {
        "images": dataset.images,
        "labels": dataset.labels.to(torch.float64),
        "generated": dataset.generated.to(torch.float64),
    }
    if dataset.attributes is not None:
        tensors["attributes"] = dataset.attributes

    write_container(path, tensors, {"kind": "dataset", "num_classes": dataset.num_classes})

    sidecar = {
        "num_classes": dataset.num_classes,
        "labels": dataset.labels.tolist(),
        "generated": dataset.generated.tolist(),
        "attributes": None if dataset.attributes is None else _json_floats(dataset.attributes),
        "meta": dataset.meta,
        **(extra or {}),
    }

    sidecar_path = path.with_suffix(".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True), encoding="utf-8")

    return sidecar_path


def _json_floats(t: torch.Tensor) -> list:
    # NaN marks rows without attributes; JSON has no NaN, so use null
    return [[None if math.isnan(v) else v for v in row] for row in t.tolist()]


def import_dataset(path: str | Path) -> LabeledDataset:
    header, tensors = read_container(path)
    if header.get("kind") != "dataset":
        raise DataError(f"{path} is not a dataset export")

    sidecar_path = Path(path).with_suffix(".json")
    meta = None
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text(encoding="utf-8")).get("meta")

    return LabeledDataset(
        tensors["images"],
        tensors["labels"].long(),
        int(header["num_classes"]),
        generated=tensors["generated"].bool(),
        attributes=tensors.get("attributes"),
        meta=meta,
    )
