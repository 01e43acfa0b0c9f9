"""Procedural single-object colour-classification images.

Each image is one flat-coloured disc, square or triangle on a black 64x64
background. The colour is the class label. Size, position, shape and
material vary independently of the label, and the split rules decide which
(size, position) or (material, position) combinations a split may contain.

The rasterizer is shared with the soft-shapes surrogate: coverage is
sigmoid(-signed_distance / tau), which is differentiable in position and
size. The dataset renders with a small tau for anti-aliased edges.
"""

import logging
import math
import torch

from ..errors import ConfigError
from ..rng import Rng
from ..types import ShapeAttributes
from .dataset import LabeledDataset


logger = logging.getLogger(__name__)

IMAGE_SIZE = 64
BASE_RADIUS = 12.0
SOFT_TAU = 1.5
DATASET_TAU = 0.5
SHAPE_LOGIT = 3.0
SQUARE_POWER = 8
CORNER_SOFTNESS = 0.5

SHAPES = ("disc", "square", "triangle")
SIZES = {"small": 0.6, "medium": 0.9, "large": 1.2}
POSITIONS = ("NW", "NE", "SW", "SE")
MATERIALS = ("rubber", "metal")

# (R, G, B) of the eight object colours, in class order
COLORS = torch.tensor(
    [
        [87, 87, 87],  # gray
        [173, 35, 35],  # red
        [42, 75, 215],  # blue
        [29, 105, 20],  # green
        [129, 74, 25],  # brown
        [129, 38, 192],  # purple
        [41, 208, 208],  # cyan
        [255, 238, 51],  # yellow
    ],
    dtype=torch.float64,
) / 255.0
NUM_CLASSES = COLORS.shape[0]

SPLIT_RULES = {
    "train-size-pos": {"size_pos": [("small", "NW"), ("medium", "NE"), ("large", "SE")]},
    "test-size-pos": {"size_pos": [("small", "SE"), ("medium", "NW"), ("large", "SW")]},
    "train-mat-pos": {"positions": ["NW", "NE"]},
    "test-mat-pos": {"positions": ["SW", "SE"]},
    "iid": {},
}

COMPLEMENT = {
    "train-size-pos": "test-size-pos",
    "test-size-pos": "train-size-pos",
    "train-mat-pos": "test-mat-pos",
    "test-mat-pos": "train-mat-pos",
    "iid": "iid",
}


def pixel_grid(size: int = IMAGE_SIZE) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-center coordinates (x right, y down), each [size, size]."""
    coords = torch.arange(size, dtype=torch.float64)
    ys, xs = torch.meshgrid(coords, coords, indexing="ij")
    return xs, ys


def to_pixels(c: torch.Tensor, size: int = IMAGE_SIZE) -> torch.Tensor:
    # normalized [-1, 1] spans first to last pixel center
    return (c + 1) * (size - 1) / 2


def signed_distances(params: torch.Tensor, size: int = IMAGE_SIZE) -> torch.Tensor:
    """Signed distance in pixels to each shape kind, [B, 3, H, W]; negative inside."""
    xs, ys = pixel_grid(size)
    cx = to_pixels(params[:, 0], size).reshape(-1, 1, 1)
    cy = to_pixels(params[:, 1], size).reshape(-1, 1, 1)
    radius = (params[:, 2] * BASE_RADIUS).reshape(-1, 1, 1)

    dx = xs - cx
    dy = ys - cy

    disc = torch.sqrt(dx**2 + dy**2 + 1e-12) - radius
    # superellipse; smooth everywhere, unlike the Chebyshev box
    square = (dx**SQUARE_POWER + dy**SQUARE_POWER + 1e-12) ** (1 / SQUARE_POWER) - radius

    # equilateral triangle, apex up, vertices on the circle of the given radius;
    # the three edge half-planes are joined with a soft maximum
    edges = []
    for angle in (90.0, 210.0, 330.0):
        nx, ny = math.cos(math.radians(angle)), math.sin(math.radians(angle))
        edges.append(nx * dx + ny * dy)
    triangle = CORNER_SOFTNESS * torch.logsumexp(torch.stack(edges) / CORNER_SOFTNESS, dim=0) - radius / 2

    return torch.stack([disc, square, triangle], dim=1)


def coverages(params: torch.Tensor, tau: float = SOFT_TAU, size: int = IMAGE_SIZE) -> torch.Tensor:
    return torch.sigmoid(-signed_distances(params, size) / tau)


def render_soft_shapes(
    params: torch.Tensor,
    colors: torch.Tensor,
    tau: float = SOFT_TAU,
    size: int = IMAGE_SIZE,
) -> torch.Tensor:
    """Render [B, 6] attribute rows [cx, cy, size, logit_disc, logit_square, logit_triangle]
    as [B, 3, H, W] images of the given per-sample RGB colours.
    """
    weights = torch.softmax(params[:, 3:6], dim=1)
    coverage = (weights[:, :, None, None] * coverages(params, tau, size)).sum(dim=1)
    return coverage[:, None] * colors[:, :, None, None]


def metal_shade(params: torch.Tensor, size: int = IMAGE_SIZE) -> torch.Tensor:
    """Radial highlight in [0.7, 1]: brightest toward the upper left of the object."""
    xs, ys = pixel_grid(size)
    radius = (params[:, 2] * BASE_RADIUS).reshape(-1, 1, 1)
    hx = to_pixels(params[:, 0], size).reshape(-1, 1, 1) - radius / 3
    hy = to_pixels(params[:, 1], size).reshape(-1, 1, 1) - radius / 3
    falloff = torch.sqrt((xs - hx) ** 2 + (ys - hy) ** 2) / (2 * radius)
    return 1.0 - 0.3 * falloff.clamp(0.0, 1.0)


def true_attributes(cx: float, cy: float, scale: float, shape: str) -> list[float]:
    logits = [SHAPE_LOGIT if s == shape else -SHAPE_LOGIT for s in SHAPES]
    return [cx, cy, scale, *logits]


def _sample_position(rng: Rng, quadrant: str) -> tuple[float, float]:
    # NW is left/top; image y grows downward
    mx, my = rng.uniform(0.25, 0.5, (2,)).tolist()
    sx = -1.0 if quadrant[1] == "W" else 1.0
    sy = -1.0 if quadrant[0] == "N" else 1.0
    return sx * mx, sy * my


def _sample_record(rng: Rng, rule: dict) -> ShapeAttributes:
    color = int(rng.integers(0, NUM_CLASSES))
    shape = SHAPES[int(rng.integers(0, len(SHAPES)))]
    material = MATERIALS[int(rng.integers(0, len(MATERIALS)))]

    if "size_pos" in rule:
        size, position = rule["size_pos"][int(rng.integers(0, len(rule["size_pos"])))]
    else:
        size = list(SIZES)[int(rng.integers(0, len(SIZES)))]
        allowed = rule.get("positions", POSITIONS)
        position = allowed[int(rng.integers(0, len(allowed)))]

    cx, cy = _sample_position(rng, position)

    return ShapeAttributes(
        shape=shape,
        size=size,
        position=position,
        material=material,
        color=color,
        cx=cx,
        cy=cy,
        scale=SIZES[size],
    )


def render_records(records: list[ShapeAttributes], size: int = IMAGE_SIZE) -> torch.Tensor:
    if not records:
        return torch.zeros(0, 3, size, size, dtype=torch.float64)

    params = torch.tensor([true_attributes(r.cx, r.cy, r.scale, r.shape) for r in records], dtype=torch.float64)
    kinds = torch.tensor([SHAPES.index(r.shape) for r in records])
    colors = COLORS[torch.tensor([r.color for r in records])]

    cov = coverages(params, DATASET_TAU, size)
    coverage = cov[torch.arange(len(records)), kinds]

    metal = torch.tensor([r.material == "metal" for r in records])
    shade = torch.where(metal[:, None, None], metal_shade(params, size), torch.ones_like(coverage))

    return (coverage * shade)[:, None] * colors[:, :, None, None]


def generate_shapes_dataset(n: int, split_rule: str, seed: int) -> LabeledDataset:
    if split_rule not in SPLIT_RULES:
        raise ConfigError(f"unknown split rule '{split_rule}'")
    if n <= 0:
        raise ConfigError(f"shapes dataset size must be positive, got {n}")

    rng = Rng(seed)
    rule = SPLIT_RULES[split_rule]
    records = [_sample_record(rng, rule) for _ in range(n)]

    images = render_records(records)
    labels = torch.tensor([r.color for r in records], dtype=torch.long)
    attributes = torch.tensor([true_attributes(r.cx, r.cy, r.scale, r.shape) for r in records], dtype=torch.float64)

    logger.info(f"Generated {n} shapes images with split rule {split_rule}")

    return LabeledDataset(
        images,
        labels,
        NUM_CLASSES,
        attributes=attributes,
        meta=[{**r.model_dump(), "split_rule": split_rule} for r in records],
    )
