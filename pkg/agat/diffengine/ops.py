"""The fixed primitive set.

Every primitive takes and returns float64 `torch.Tensor`s; reverse-mode
gradients come from torch autograd. Shape rules are checked here so a
mismatch surfaces as a `ShapeError` instead of a silent broadcast.
"""

import torch
import torch.nn.functional as F

from ..errors import ShapeError

MAX_BLUR_RADIUS = 7
SIGMA_FLOOR = 1e-3


def _same_shape(op: str, a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape("add", a, b)
    return a + b


def subtract(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape("subtract", a, b)
    return a - b


def multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape("multiply", a, b)
    return a * b


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() != 2 or b.dim() != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {tuple(a.shape)} by {tuple(b.shape)}")
    return a @ b


def conv2d(
    x: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> torch.Tensor:
    if x.dim() != 4 or weight.dim() != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {tuple(x.shape)} and {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"conv2d: bias shape {tuple(bias.shape)} does not match {weight.shape[0]} filters")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def relu(x: torch.Tensor) -> torch.Tensor:
    # torch's relu backward masks with (out > 0), so the gradient at exactly 0 is 0
    return torch.relu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def log(x: torch.Tensor) -> torch.Tensor:
    return torch.log(x)


def exp(x: torch.Tensor) -> torch.Tensor:
    return torch.exp(x)


def reduce_sum(x: torch.Tensor) -> torch.Tensor:
    return x.sum()


def reduce_mean(x: torch.Tensor) -> torch.Tensor:
    return x.mean()


def squared_l2(x: torch.Tensor) -> torch.Tensor:
    return (x * x).sum()


def max_pool2x2(x: torch.Tensor) -> torch.Tensor:
    if x.dim() != 4 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ShapeError(f"max_pool2x2: expected [B,C,H,W] with H,W >= 2, got {tuple(x.shape)}")
    return F.max_pool2d(x, kernel_size=2, stride=2)


def affine_grid(theta: torch.Tensor, size) -> torch.Tensor:
    """Sampling grid for `theta` rows [a, b, tx, c, d, ty] in normalized coordinates.

    Coordinates follow the align-corners convention: -1 and +1 are the centers
    of the first and last pixel.
    """
    theta = theta.reshape(-1, 2, 3)
    if len(size) != 4 or theta.shape[0] != size[0]:
        raise ShapeError(f"affine_grid: {theta.shape[0]} transforms for output size {tuple(size)}")
    return F.affine_grid(theta, list(size), align_corners=True)


def grid_sample(x: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Four-corner bilinear sampling with zeros outside the image.

    Gradients flow to both `x` and `grid`.
    """
    if x.dim() != 4 or grid.dim() != 4 or grid.shape[0] != x.shape[0] or grid.shape[-1] != 2:
        raise ShapeError(f"grid_sample: cannot sample {tuple(x.shape)} at grid {tuple(grid.shape)}")
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="zeros", align_corners=True)


def gaussian_kernel(sigma: torch.Tensor) -> torch.Tensor:
    """Normalized 1-d Gaussian weights, one row per entry of `sigma`.

    Rows always have 2 * MAX_BLUR_RADIUS + 1 taps; taps beyond ceil(3 sigma)
    are zero. The truncation radius is piecewise constant in sigma, so the
    derivative with respect to sigma only flows through the exponentials and
    the normalizer.
    """
    offsets = torch.arange(-MAX_BLUR_RADIUS, MAX_BLUR_RADIUS + 1, dtype=sigma.dtype)
    s = sigma.reshape(-1, 1).clamp_min(SIGMA_FLOOR)
    radius = torch.ceil(3 * s.detach()).clamp(max=MAX_BLUR_RADIUS)
    mask = (offsets.abs() <= radius).to(sigma.dtype)
    weights = torch.exp(-(offsets**2) / (2 * s**2)) * mask
    return weights / weights.sum(dim=-1, keepdim=True)


def _symmetric_index(n: int, pad: int) -> torch.Tensor:
    # edge-including mirror: ... x1 x0 | x0 x1 ... x(n-1) | x(n-1) x(n-2) ...
    idx = torch.arange(-pad, n + pad) % (2 * n)
    return torch.where(idx >= n, 2 * n - 1 - idx, idx)


def _blur_along(x: torch.Tensor, weights: torch.Tensor, dim: int) -> torch.Tensor:
    n = x.shape[dim]
    padded = x.index_select(dim, _symmetric_index(n, MAX_BLUR_RADIUS))
    taps = weights.shape[-1]
    shape = (-1,) + (1,) * (x.dim() - 1)

    out = torch.zeros_like(x)
    for i in range(taps):
        out = out + weights[:, i].reshape(shape) * padded.narrow(dim, i, n)
    return out


def gaussian_blur(x: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Separable Gaussian blur of [B,C,H,W] images with one sigma (pixels) per image."""
    if x.dim() != 4 or sigma.numel() != x.shape[0]:
        raise ShapeError(f"gaussian_blur: {sigma.numel()} sigmas for images {tuple(x.shape)}")
    weights = gaussian_kernel(sigma)
    return _blur_along(_blur_along(x, weights, dim=3), weights, dim=2)


def broadcast(s: torch.Tensor, shape) -> torch.Tensor:
    if s.numel() != 1:
        raise ShapeError(f"broadcast: expected a scalar, got {tuple(s.shape)}")
    return s.reshape(()).expand(tuple(shape))


PRIMITIVES = {
    "add": add,
    "subtract": subtract,
    "multiply": multiply,
    "matmul": matmul,
    "conv2d": conv2d,
    "relu": relu,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log": log,
    "exp": exp,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "squared_l2": squared_l2,
    "max_pool2x2": max_pool2x2,
    "affine_grid": affine_grid,
    "grid_sample": grid_sample,
    "gaussian_blur": gaussian_blur,
    "broadcast": broadcast,
}
