"""Central finite differences and the primitive gradient checks."""

import logging
import math
import torch

from dataclasses import dataclass, field
from typing import Callable

from ..errors import NonFiniteError
from ..rng import Rng
from .graph import Graph, backward, eval_graph


logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
TOLERANCE = 1e-4
KINK_MARGIN = 1e-3


def _scalar(value) -> float:
    value = float(torch.as_tensor(value).reshape(()))
    if not math.isfinite(value):
        raise NonFiniteError(f"function value is {value}")
    return value


def finite_difference_gradient(
    f: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    h: float = DEFAULT_STEP,
    coords: list[int] | None = None,
) -> torch.Tensor:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every flat coordinate i, or only for `coords`."""
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")

    x = torch.as_tensor(x, dtype=torch.float64).detach().clone()
    flat = x.view(-1)
    grad = torch.zeros_like(flat)

    indices = range(flat.numel()) if coords is None else coords

    with torch.no_grad():
        for i in indices:
            orig = flat[i].item()

            flat[i] = orig + h
            f_plus = _scalar(f(x))
            flat[i] = orig - h
            f_minus = _scalar(f(x))
            flat[i] = orig

            grad[i] = (f_plus - f_minus) / (2 * h)

    return grad.view_as(x)


def analytic_gradient(f: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    x = torch.as_tensor(x, dtype=torch.float64).detach().clone().requires_grad_(True)
    out = f(x)
    if not out.requires_grad:
        return torch.zeros_like(x)
    (g,) = torch.autograd.grad(out.reshape(()), x, allow_unused=True)
    return torch.zeros_like(x) if g is None else g.detach()


def relative_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    diff = (analytic - numeric).abs().max().item()
    scale = max(analytic.abs().max().item(), numeric.abs().max().item(), 1e-8)
    return diff / scale


def check_gradient(
    f: Callable[[torch.Tensor], torch.Tensor],
    x: torch.Tensor,
    h: float = DEFAULT_STEP,
    coords: list[int] | None = None,
) -> float:
    analytic = analytic_gradient(f, x)
    numeric = finite_difference_gradient(f, x, h=h, coords=coords)

    if coords is not None:
        analytic = analytic.reshape(-1)[list(coords)]
        numeric = numeric.reshape(-1)[list(coords)]

    return relative_error(analytic, numeric)


def away_from_zero(x: torch.Tensor, margin: float = KINK_MARGIN) -> torch.Tensor:
    """Push entries with |x| < margin out to +-margin (ReLU kink)."""
    sign = torch.where(x < 0, -1.0, 1.0).to(x.dtype)
    return torch.where(x.abs() < margin, sign * margin, x)


def distinct_values(rng: Rng, shape, low: float = -2.0, high: float = 2.0) -> torch.Tensor:
    """A random arrangement of evenly spaced values, so max-pool windows never tie."""
    n = math.prod(shape)
    levels = torch.linspace(low, high, n, dtype=torch.float64)
    return levels[torch.from_numpy(rng.permutation(n))].reshape(shape)


def off_grid_coords(rng: Rng, shape, size: int, margin: float = 0.05) -> torch.Tensor:
    """Normalized sampling coordinates whose pixel positions stay inside a cell, not on its edges."""
    cells = torch.from_numpy(rng.integers(0, size - 1, size=shape)).to(torch.float64)
    frac = rng.uniform(margin, 1 - margin, shape)
    return 2 * (cells + frac) / (size - 1) - 1


def _blur_sigmas(rng: Rng, n: int) -> torch.Tensor:
    # keep 3*sigma away from an integer so the truncation radius is locally constant
    base = torch.from_numpy(rng.integers(1, 7, size=n)).to(torch.float64)
    return (base + rng.uniform(0.1, 0.9, (n,))) / 3


@dataclass(frozen=True)
class PrimitiveCase:
    name: str
    op: str
    make_inputs: Callable[[Rng], dict[str, torch.Tensor]]
    attrs: dict = field(default_factory=dict)


PRIMITIVE_CASES = [
    PrimitiveCase("add", "add", lambda r: {"a": r.uniform(-2, 2, (3, 4)), "b": r.uniform(-2, 2, (3, 4))}),
    PrimitiveCase("subtract", "subtract", lambda r: {"a": r.uniform(-2, 2, (3, 4)), "b": r.uniform(-2, 2, (3, 4))}),
    PrimitiveCase("multiply", "multiply", lambda r: {"a": r.uniform(-2, 2, (3, 4)), "b": r.uniform(-2, 2, (3, 4))}),
    PrimitiveCase("matmul", "matmul", lambda r: {"a": r.uniform(-2, 2, (3, 4)), "b": r.uniform(-2, 2, (4, 2))}),
    PrimitiveCase(
        "conv2d_stride1",
        "conv2d",
        lambda r: {"x": r.uniform(-2, 2, (2, 2, 6, 6)), "w": r.uniform(-2, 2, (3, 2, 3, 3)), "b": r.uniform(-2, 2, (3,))},
        {"stride": 1, "padding": 1},
    ),
    PrimitiveCase(
        "conv2d_stride2",
        "conv2d",
        lambda r: {"x": r.uniform(-2, 2, (2, 2, 7, 7)), "w": r.uniform(-2, 2, (3, 2, 3, 3)), "b": r.uniform(-2, 2, (3,))},
        {"stride": 2, "padding": 1},
    ),
    PrimitiveCase("relu", "relu", lambda r: {"x": away_from_zero(r.uniform(-2, 2, (4, 5)))}),
    PrimitiveCase("sigmoid", "sigmoid", lambda r: {"x": r.uniform(-2, 2, (4, 5))}),
    PrimitiveCase("softmax", "softmax", lambda r: {"x": r.uniform(-2, 2, (3, 5))}, {"dim": -1}),
    PrimitiveCase("log", "log", lambda r: {"x": r.uniform(0.1, 2, (4, 5))}),
    PrimitiveCase("exp", "exp", lambda r: {"x": r.uniform(-2, 2, (4, 5))}),
    PrimitiveCase("sum", "sum", lambda r: {"x": r.uniform(-2, 2, (4, 5))}),
    PrimitiveCase("mean", "mean", lambda r: {"x": r.uniform(-2, 2, (4, 5))}),
    PrimitiveCase("squared_l2", "squared_l2", lambda r: {"x": r.uniform(-2, 2, (4, 5))}),
    PrimitiveCase("max_pool2x2", "max_pool2x2", lambda r: {"x": distinct_values(r, (2, 2, 4, 4))}),
    PrimitiveCase(
        "affine_grid", "affine_grid", lambda r: {"theta": r.uniform(-2, 2, (2, 6))}, {"size": (2, 1, 5, 5)}
    ),
    PrimitiveCase(
        "grid_sample",
        "grid_sample",
        lambda r: {"x": r.uniform(-2, 2, (2, 1, 5, 5)), "grid": off_grid_coords(r, (2, 4, 4, 2), 5)},
    ),
    PrimitiveCase(
        "gaussian_blur",
        "gaussian_blur",
        lambda r: {"x": r.uniform(-2, 2, (2, 1, 9, 9)), "sigma": _blur_sigmas(r, 2)},
    ),
    PrimitiveCase("broadcast", "broadcast", lambda r: {"s": r.uniform(-2, 2, (1,))}, {"shape": (3, 4)}),
]


def probe_graph(case: PrimitiveCase, inputs: dict[str, torch.Tensor], rng: Rng) -> tuple[Graph, torch.Tensor]:
    """sum(op(inputs) * probe) for a fixed random probe, so every output entry is weighted differently."""
    graph = Graph()
    names = [graph.leaf(n) for n in inputs]
    graph.set_output(graph.apply(case.op, *names, name="op", **case.attrs))
    shape = eval_graph(graph, inputs).shape

    probe = rng.uniform(-1, 1, tuple(shape))
    graph.constant("probe")
    graph.set_output(graph.apply("sum", graph.apply("multiply", "op", "probe")))

    return graph, probe


def check_primitive(case: PrimitiveCase, rng: Rng, trials: int = 50, h: float = DEFAULT_STEP) -> float:
    worst = 0.0

    for _ in range(trials):
        inputs = case.make_inputs(rng)
        graph, probe = probe_graph(case, inputs, rng)
        bindings = {**inputs, "probe": probe}

        grads = backward(graph, bindings)

        for name in inputs:

            def f(x, name=name):
                return eval_graph(graph, {**bindings, name: x})

            numeric = finite_difference_gradient(f, inputs[name], h=h)
            worst = max(worst, relative_error(grads[name], numeric))

    return worst


def run_primitive_checks(seed: int = 0, trials: int = 50, only: str | None = None) -> dict[str, float]:
    rng = Rng(seed)
    results = {}

    for i, case in enumerate(PRIMITIVE_CASES):
        name = f"primitives.{case.name}"
        if only and not name.startswith(only):
            continue

        results[name] = check_primitive(case, rng.spawn(i), trials=trials)
        logger.debug(f"{name}: max relative error {results[name]:.3e}")

    return results
