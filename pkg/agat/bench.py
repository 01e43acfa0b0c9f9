"""Robustness benchmarks: RTS-perturbed test sets, synthetic corruptions,
severity sweeps and shapes split evaluation.

Every generator is a pure function of (dataset, spec): the randomness comes
from an `Rng` seeded by the spec, and labels are never touched.
"""

import csv
import cv2
import json
import logging
import math
import numpy as np
import torch

from pathlib import Path
from pydantic import BaseModel, Field, ValidationError, model_validator
from typing import Literal

from .config import _validation_message
from .data.dataset import LabeledDataset
from .data.shapes import COMPLEMENT, generate_shapes_dataset
from .errors import ConfigError, DataError
from .models import Classifier
from .rng import Rng
from .surrogates import apply_affine
from .types import ConditionResult, EvalReport, SweepRow


logger = logging.getLogger(__name__)

EVAL_BATCH = 256

# severity 1..5 parameters of the corruption benchmark's reference generator
SEVERITIES = {
    "gaussian-noise": [0.04, 0.06, 0.08, 0.09, 0.10],
    "shot-noise": [500, 250, 100, 75, 50],
    "impulse-noise": [0.01, 0.02, 0.03, 0.05, 0.07],
    "defocus-blur": [(0.3, 0.4), (0.4, 0.5), (0.5, 0.6), (1, 0.2), (1.5, 0.1)],
    "gaussian-blur": [0.4, 0.6, 0.7, 0.8, 1.0],
    "brightness": [0.05, 0.1, 0.15, 0.2, 0.3],
    "contrast": [0.75, 0.5, 0.4, 0.3, 0.15],
}

CATEGORIES = {
    "noise": ["gaussian-noise", "shot-noise", "impulse-noise"],
    "blur": ["defocus-blur", "gaussian-blur"],
    "digital": ["brightness", "contrast"],
}

CorruptionKind = Literal[
    "gaussian-noise",
    "shot-noise",
    "impulse-noise",
    "defocus-blur",
    "gaussian-blur",
    "brightness",
    "contrast",
]


class RtsSpec(BaseModel):
    """Uniform draws of rotation (degrees), translation (pixels) and scale.

    `mode` selects which components are active; inactive ones stay at identity.
    """

    rotation: float = Field(default=45.0, ge=0.0)
    translation: float = Field(default=10.0, ge=0.0)
    scale: tuple[float, float] = (0.7, 1.3)
    mode: Literal["R", "T", "S", "RTS"] = "RTS"
    seed: int = 0
    integer_pixels: bool = False

    @model_validator(mode="after")
    def check_scale(self):
        lo, hi = self.scale
        if not (0 < lo <= 1.0 <= hi):
            raise ValueError(f"scale range {self.scale} must straddle 1")
        return self

    def active(self, component: str) -> bool:
        return self.mode == "RTS" or self.mode == component

    @property
    def is_identity(self) -> bool:
        return (
            (not self.active("R") or self.rotation == 0)
            and (not self.active("T") or self.translation == 0)
            and (not self.active("S") or self.scale == (1.0, 1.0))
        )


class CorruptionSpec(BaseModel):
    kind: CorruptionKind
    severity: int = Field(default=5, ge=1, le=5)
    seed: int = 0

    @property
    def parameter(self):
        return SEVERITIES[self.kind][self.severity - 1]


def make_corruption(kind: str, severity: int = 5, seed: int = 0) -> CorruptionSpec:
    try:
        return CorruptionSpec(kind=kind, severity=severity, seed=seed)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def make_rts_spec(**values) -> RtsSpec:
    try:
        return RtsSpec(**values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def rts_parameters(spec: RtsSpec, n: int, height: int, width: int) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Per-image sampling matrices [n, 6] and the draws behind them."""
    rng = Rng(spec.seed)
    angle = rng.uniform(-spec.rotation, spec.rotation, (n,))
    shift = rng.uniform(-spec.translation, spec.translation, (n, 2))
    scale = rng.uniform(spec.scale[0], spec.scale[1], (n,))

    if spec.integer_pixels:
        shift = shift.round()
    if not spec.active("R"):
        angle = torch.zeros(n, dtype=torch.float64)
    if not spec.active("T"):
        shift = torch.zeros(n, 2, dtype=torch.float64)
    if not spec.active("S"):
        scale = torch.ones(n, dtype=torch.float64)

    theta = torch.deg2rad(angle)
    cos, sin = torch.cos(theta) / scale, torch.sin(theta) / scale
    # content moves by +shift, so the grid samples at -shift
    tx = -shift[:, 0] * 2 / (width - 1)
    ty = -shift[:, 1] * 2 / (height - 1)

    matrices = torch.stack([cos, -sin, tx, sin, cos, ty], dim=1)
    return matrices, {"angle": angle, "shift": shift, "scale": scale}


def make_rts_testset(dataset: LabeledDataset, spec: RtsSpec) -> LabeledDataset:
    if spec.is_identity:
        return dataset.subset(torch.arange(len(dataset)))

    _, height, width = dataset.image_shape
    matrices, _ = rts_parameters(spec, len(dataset), height, width)

    out = []
    with torch.no_grad():
        for start in range(0, len(dataset), EVAL_BATCH):
            stop = start + EVAL_BATCH
            out.append(apply_affine(dataset.images[start:stop], matrices[start:stop]))

    return LabeledDataset(torch.cat(out), dataset.labels, dataset.num_classes, attributes=dataset.attributes)


def disk(radius: float, alias_blur: float) -> np.ndarray:
    if radius <= 8:
        offsets = np.arange(-8, 8 + 1)
        ksize = (3, 3)
    else:
        offsets = np.arange(-radius, radius + 1)
        ksize = (5, 5)
    xs, ys = np.meshgrid(offsets, offsets)
    aliased = np.array((xs**2 + ys**2) <= radius**2, dtype=np.float64)
    aliased /= np.sum(aliased)

    # supersample the disk to antialias
    return cv2.GaussianBlur(aliased, ksize=ksize, sigmaX=alias_blur)


def _per_image(images: np.ndarray, fn) -> np.ndarray:
    # [N, C, H, W] -> fn on each [H, W, C] -> back
    out = np.empty_like(images)
    for i, img in enumerate(images):
        res = fn(np.ascontiguousarray(img.transpose(1, 2, 0)))
        out[i] = res.reshape(img.shape[1], img.shape[2], -1).transpose(2, 0, 1)
    return out


def _brightness(img: np.ndarray, c: float) -> np.ndarray:
    if img.shape[2] != 3:
        return np.clip(img + c, 0, 1)
    hsv = cv2.cvtColor(img.astype(np.float32), cv2.COLOR_RGB2HSV)
    hsv[:, :, 2] = np.clip(hsv[:, :, 2] + c, 0, 1)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(np.float64)


def _impulse(images: np.ndarray, p: float, rng: Rng) -> np.ndarray:
    out = images.copy()
    n, channels, height, width = images.shape
    count = math.floor(p * height * width)
    for i in range(n):
        for ch in range(channels):
            rows, cols = np.divmod(rng.choice(height * width, count), width)
            out[i, ch, rows, cols] = rng.integers(0, 2, size=count).astype(np.float64)
    return out


def corrupt(dataset: LabeledDataset, spec: CorruptionSpec) -> LabeledDataset:
    """Apply one corruption at one severity to every image, clamped to [0, 1]."""
    images = dataset.images.numpy().copy()
    rng = Rng(spec.seed)
    c = spec.parameter

    if spec.kind == "gaussian-noise":
        out = images + c * rng.normal(images.shape).numpy()
    elif spec.kind == "shot-noise":
        out = rng.poisson(images * c) / c
    elif spec.kind == "impulse-noise":
        out = _impulse(images, c, rng)
    elif spec.kind == "defocus-blur":
        kernel = disk(radius=c[0], alias_blur=c[1])
        out = _per_image(images, lambda img: cv2.filter2D(img, -1, kernel))
    elif spec.kind == "gaussian-blur":
        out = _per_image(
            images, lambda img: cv2.GaussianBlur(img, (0, 0), sigmaX=c, borderType=cv2.BORDER_REFLECT)
        )
    elif spec.kind == "brightness":
        out = _per_image(images, lambda img: _brightness(img, c))
    elif spec.kind == "contrast":
        means = images.mean(axis=(2, 3), keepdims=True)
        out = (images - means) * c + means
    else:
        raise ConfigError(f"unknown corruption '{spec.kind}'")

    return LabeledDataset(
        torch.from_numpy(np.clip(out, 0, 1)),
        dataset.labels,
        dataset.num_classes,
        attributes=dataset.attributes,
    )


@torch.no_grad()
def accuracy(model: Classifier, dataset: LabeledDataset, batch_size: int = EVAL_BATCH) -> tuple[float, int]:
    """Top-1 accuracy (%) and sample count."""
    if len(dataset) == 0:
        raise DataError("cannot evaluate on an empty set")
    if dataset.num_classes != model.num_classes:
        raise DataError(f"{dataset.num_classes}-class data for a {model.num_classes}-class model")

    model.eval()
    correct = 0
    for start in range(0, len(dataset), batch_size):
        _, logits = model(dataset.images[start : start + batch_size])
        correct += int((logits.argmax(dim=1) == dataset.labels[start : start + batch_size]).sum())

    return 100.0 * correct / len(dataset), len(dataset)


def evaluate_conditions(
    model: Classifier,
    conditions: dict[str, LabeledDataset],
    fingerprint: str = "",
    seed: int = 0,
) -> EvalReport:
    report = EvalReport(architecture=model.architecture, fingerprint=fingerprint, seed=seed)
    for name, dataset in conditions.items():
        acc, n = accuracy(model, dataset)
        report.results.append(ConditionResult(condition=name, accuracy=acc, n=n))
        logger.info(f"{name}: {acc:.2f}% of {n}")
    return report


def evaluate(
    model: Classifier,
    dataset: LabeledDataset,
    condition: str = "clean",
    fingerprint: str = "",
    seed: int = 0,
) -> EvalReport:
    return evaluate_conditions(model, {condition: dataset}, fingerprint, seed)


def rts_report(model: Classifier, dataset: LabeledDataset, seed: int = 0, fingerprint: str = "") -> EvalReport:
    """Clean accuracy plus the R, T, S and RTS conditions of the standard spec."""
    conditions = {"clean": dataset}
    for mode in ("R", "T", "S", "RTS"):
        conditions[mode] = make_rts_testset(dataset, make_rts_spec(mode=mode, seed=seed))
    return evaluate_conditions(model, conditions, fingerprint, seed)


def corruption_report(
    model: Classifier,
    dataset: LabeledDataset,
    severity: int = 5,
    seed: int = 0,
    fingerprint: str = "",
) -> EvalReport:
    """Every in-scope corruption at one severity, then the category means and `avg`."""
    conditions = {"clean": dataset}
    for i, kind in enumerate(SEVERITIES):
        conditions[kind] = corrupt(dataset, make_corruption(kind, severity, seed + i))

    report = evaluate_conditions(model, conditions, fingerprint, seed)

    by_kind = {r.condition: r for r in report.results}
    for category, kinds in CATEGORIES.items():
        report.results.append(_mean_result(category, [by_kind[k] for k in kinds]))
    report.results.append(_mean_result("avg", [by_kind[k] for k in SEVERITIES]))

    return report


def _mean_result(name: str, results: list[ConditionResult]) -> ConditionResult:
    return ConditionResult(
        condition=name,
        accuracy=sum(r.accuracy for r in results) / len(results),
        n=sum(r.n for r in results),
    )


def sweep_spec(axis: str, level: float, seed: int = 0) -> RtsSpec:
    """R levels are degrees (range +-level), T levels pixels (+-level), S levels a fraction (1 +- level)."""
    if axis == "R":
        return make_rts_spec(mode="R", rotation=level, seed=seed)
    if axis == "T":
        return make_rts_spec(mode="T", translation=level, seed=seed)
    if axis == "S":
        return make_rts_spec(mode="S", scale=(1.0 - level, 1.0 + level), seed=seed)
    raise ConfigError(f"unknown sweep axis '{axis}'")


def severity_sweep(
    model: Classifier,
    dataset: LabeledDataset,
    axis: str,
    levels: list[float],
    seed: int = 0,
) -> list[SweepRow]:
    """One evaluation per level with the other axes at identity."""
    if any(b < a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"sweep levels must be non-decreasing, got {levels}")

    rows = []
    for level in levels:
        acc, n = accuracy(model, make_rts_testset(dataset, sweep_spec(axis, level, seed)))
        rows.append(SweepRow(axis=axis, level=level, accuracy=acc, n=n))
        logger.info(f"Sweep {axis} level {level:g}: {acc:.2f}%")
    return rows


def shapes_split_eval(
    model: Classifier,
    split_rule: str,
    n: int = 1000,
    seed: int = 1,
    trained_on: str | None = None,
    fingerprint: str = "",
) -> EvalReport:
    """Accuracy on freshly generated shapes images of `split_rule`."""
    if trained_on is not None and COMPLEMENT.get(trained_on) != split_rule:
        logger.warning(
            f"Evaluating on {split_rule}, but the model was trained on {trained_on} "
            f"whose held-out rule is {COMPLEMENT.get(trained_on)}"
        )

    dataset = generate_shapes_dataset(n, split_rule, seed)
    return evaluate(model, dataset, split_rule, fingerprint, seed)


def compare_reports(
    report: EvalReport,
    baseline: EvalReport,
    min_gap: float | None = None,
    max_clean_drop: float | None = None,
) -> list[str]:
    """Threshold failures of `report` against `baseline`; an empty list passes."""
    failures = []
    shared = [c for c in report.conditions() if c in baseline.conditions()]

    if min_gap is not None:
        for condition in shared:
            if condition == "clean":
                continue
            gap = report.accuracy(condition) - baseline.accuracy(condition)
            if gap < min_gap:
                failures.append(f"{condition}: gap {gap:.2f} below {min_gap:g}")

    if max_clean_drop is not None and "clean" in shared:
        drop = baseline.accuracy("clean") - report.accuracy("clean")
        if drop > max_clean_drop:
            failures.append(f"clean: drop {drop:.2f} above {max_clean_drop:g}")

    return failures


def write_report(report: EvalReport, output_dir: str | Path, name: str = "report") -> tuple[Path, Path]:
    output_dir = Path(output_dir)
    json_path = output_dir / f"{name}.json"
    csv_path = output_dir / f"{name}.csv"

    json_path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True), encoding="utf-8")

    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["condition", "accuracy", "n"])
        for r in report.results:
            writer.writerow([r.condition, repr(r.accuracy), r.n])

    return json_path, csv_path


def read_report(path: str | Path) -> EvalReport:
    try:
        return EvalReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read report {path}: {e}") from e
    except ValueError as e:
        raise DataError(f"{path} is not an evaluation report: {e}") from e


def write_sweep(rows: list[SweepRow], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["axis", "level", "accuracy", "n"])
        for row in rows:
            writer.writerow([row.axis, repr(row.level), repr(row.accuracy), row.n])
    return path
