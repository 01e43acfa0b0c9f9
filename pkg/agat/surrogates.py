"""Differentiable attribute-driven image manipulators F(x, alpha).

Every surrogate exposes the same contract:

- `source_alpha`: the attribute vector of an unperturbed sample
- `init_alpha`: the starting point of an augmentation event
- `context`: per-event constants (frozen noise, object colours)
- `apply`: the manipulated images, differentiable in alpha
- `project`: the clamp onto the bounds box
"""

import logging
import math
import torch

from dataclasses import dataclass

from .data.dataset import LabeledDataset
from .data.shapes import COLORS, IMAGE_SIZE, render_soft_shapes
from .diffengine import ops
from .errors import ConfigError, DataError, GraphError
from .rng import Rng


logger = logging.getLogger(__name__)

JITTER = 0.05


@dataclass
class AttributeVector:
    values: torch.Tensor
    lower: torch.Tensor
    upper: torch.Tensor
    surrogate: str

    def projected(self) -> "AttributeVector":
        return AttributeVector(project_alpha(self.values, self.lower, self.upper), self.lower, self.upper, self.surrogate)

    def in_bounds(self) -> bool:
        return bool(torch.all(self.values >= self.lower) and torch.all(self.values <= self.upper))


def project_alpha(alpha: torch.Tensor, lower: torch.Tensor, upper: torch.Tensor) -> torch.Tensor:
    return torch.clamp(alpha, min=lower, max=upper)


class Surrogate:
    id: str = ""
    dim: int = 0
    jitter: float = 0.0

    def __init__(self, lower: list[float], upper: list[float]):
        self.lower = torch.tensor(lower, dtype=torch.float64)
        self.upper = torch.tensor(upper, dtype=torch.float64)
        if torch.any(self.lower > self.upper):
            raise ConfigError(f"{self.id}: lower bounds exceed upper bounds")

    def source_alpha(self, dataset: LabeledDataset, indices: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def init_alpha(self, source: torch.Tensor, rng: Rng, jitter: float | None = None) -> AttributeVector:
        jitter = self.jitter if jitter is None else jitter
        values = source.clone()
        if jitter > 0:
            values = values + rng.uniform(-jitter, jitter, tuple(source.shape))
        return AttributeVector(values, self.lower, self.upper, self.id).projected()

    def context(self, x: torch.Tensor, labels: torch.Tensor, rng: Rng) -> dict:
        return {}

    def apply(self, x: torch.Tensor, alpha: torch.Tensor, **context) -> torch.Tensor:
        raise NotImplementedError

    def project(self, alpha: torch.Tensor) -> torch.Tensor:
        return project_alpha(alpha, self.lower, self.upper)


IDENTITY_AFFINE = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]


class AffineSurrogate(Surrogate):
    """Rows [a, b, tx, c, d, ty] of a 2x3 sampling matrix in normalized coordinates."""

    id = "affine-stn"
    dim = 6
    jitter = JITTER

    def __init__(self, height: int, max_rotation: float = 60.0, scale_range=(0.5, 1.5), max_shift_px: float = 12.0):
        s_lo, s_hi = scale_range
        off = s_hi * math.sin(math.radians(max_rotation))
        t = max_shift_px / (height / 2)
        diag_lo = s_lo * math.cos(math.radians(max_rotation))

        super().__init__(
            lower=[diag_lo, -off, -t, -off, diag_lo, -t],
            upper=[s_hi, off, t, off, s_hi, t],
        )

    def source_alpha(self, dataset, indices):
        return torch.tensor(IDENTITY_AFFINE, dtype=torch.float64).repeat(len(indices), 1)

    def apply(self, x, alpha, **context):
        grid = ops.affine_grid(alpha, tuple(x.shape))
        return ops.grid_sample(x, grid)


class BlurNoiseSurrogate(Surrogate):
    """alpha = [blur sigma in pixels, noise standard deviation], with noise drawn once per event."""

    RANGES = {
        "blur-noise": ([0.0, 0.0], [3.0, 0.3], [0.5, 0.02]),
        "blur-only": ([0.0, 0.0], [3.0, 0.0], [0.5, 0.0]),
        "noise-only": ([0.0, 0.0], [0.0, 0.3], [0.0, 0.02]),
    }

    dim = 2

    def __init__(self, mode: str = "blur-noise"):
        if mode not in self.RANGES:
            raise ConfigError(f"unknown blur/noise variant '{mode}'")
        self.id = mode
        lower, upper, start = self.RANGES[mode]
        super().__init__(lower, upper)
        self.start = torch.tensor(start, dtype=torch.float64)

    def source_alpha(self, dataset, indices):
        return torch.zeros(len(indices), 2, dtype=torch.float64)

    def init_alpha(self, source, rng, jitter=None):
        values = self.start.repeat(source.shape[0], 1)
        return AttributeVector(values, self.lower, self.upper, self.id).projected()

    def context(self, x, labels, rng):
        return {"noise": rng.normal(tuple(x.shape))}

    def apply(self, x, alpha, noise=None, **context):
        if torch.any(alpha < 0):
            raise GraphError(f"{self.id}: attributes must be non-negative, got min {alpha.min().item():.4g}")
        if noise is None:
            noise = torch.zeros_like(x)

        blurred = ops.gaussian_blur(x, alpha[:, 0])
        return blurred + alpha[:, 1].reshape(-1, 1, 1, 1) * noise


class SoftShapesSurrogate(Surrogate):
    """alpha = [cx, cy, size, shape logits (3)]; the image is re-rendered from alpha alone."""

    id = "soft-shapes"
    dim = 6
    jitter = JITTER

    def __init__(self, size: int = IMAGE_SIZE):
        super().__init__(
            lower=[-1.0, -1.0, 0.4, -5.0, -5.0, -5.0],
            upper=[1.0, 1.0, 1.4, 5.0, 5.0, 5.0],
        )
        self.size = size

    def source_alpha(self, dataset, indices):
        if dataset.attributes is None:
            raise DataError("soft-shapes needs per-sample shape attributes; this dataset has none")
        alpha = dataset.attributes[indices]
        if torch.isnan(alpha).any():
            raise DataError("some sampled items have no shape attributes")
        return alpha.clone()

    def context(self, x, labels, rng):
        return {"colors": COLORS[labels]}

    def apply(self, x, alpha, colors=None, **context):
        if colors is None:
            raise GraphError("soft-shapes needs the per-sample class colours")
        return render_soft_shapes(alpha, colors, size=self.size)


def make_surrogate(surrogate_id: str, image_shape: tuple[int, int, int]) -> Surrogate:
    if surrogate_id == "affine-stn":
        return AffineSurrogate(height=image_shape[1])
    if surrogate_id in BlurNoiseSurrogate.RANGES:
        return BlurNoiseSurrogate(surrogate_id)
    if surrogate_id == "soft-shapes":
        if tuple(image_shape) != (3, IMAGE_SIZE, IMAGE_SIZE):
            raise ConfigError(f"soft-shapes renders 3x{IMAGE_SIZE}x{IMAGE_SIZE} images, not {image_shape}")
        return SoftShapesSurrogate()
    raise ConfigError(f"unknown surrogate '{surrogate_id}'")


def apply_affine(x: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    return ops.grid_sample(x, ops.affine_grid(alpha, tuple(x.shape)))


def apply_blur_noise(x: torch.Tensor, alpha: torch.Tensor, frozen_noise: torch.Tensor | None = None) -> torch.Tensor:
    return BlurNoiseSurrogate("blur-noise").apply(x, alpha, noise=frozen_noise)


def apply_soft_shapes(alpha: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return render_soft_shapes(alpha, COLORS[labels])
