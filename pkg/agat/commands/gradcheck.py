"""Finite-difference checks of every differentiable piece: primitives, model
forwards, surrogates and losses. Each check returns the worst relative error.
"""

import argparse
import logging
import time
import torch

from torch.func import functional_call
from typing import Callable

from ..diffengine import ops
from ..diffengine.gradcheck import TOLERANCE, check_gradient, run_primitive_checks
from ..errors import ConfigError
from ..losses import LossWeights, l_ce, l_cls_agat_logits, l_const, one_hot
from ..models import ARCHITECTURES, build
from ..rng import Rng
from ..surrogates import IDENTITY_AFFINE, BlurNoiseSurrogate, SoftShapesSurrogate, apply_affine
from ..types import GradcheckResult


logger = logging.getLogger(__name__)

MODEL_COORDS = 24


def _sampled(rng: Rng, n: int, k: int = MODEL_COORDS) -> list[int]:
    return sorted(rng.choice(n, min(k, n)).tolist())


def model_check(architecture: str) -> Callable[[Rng], float]:
    def check(rng: Rng) -> float:
        model = build(architecture, seed=int(rng.integers(0, 2**31)))
        x = rng.uniform(0, 1, (2, *model.input_shape))

        err = check_gradient(lambda v: model(v)[1].mean(), x, coords=_sampled(rng, x.numel()))

        name, weight = next(iter(model.named_parameters()))
        params = {name: weight.detach()}

        def logits_mean(w):
            return functional_call(model, {**params, name: w}, (x,))[1].mean()

        return max(err, check_gradient(logits_mean, weight.detach(), coords=_sampled(rng, weight.numel())))

    return check


def _off_integer_affine(rng: Rng, b: int, size: int, margin: float = 1e-3) -> torch.Tensor:
    # sampled pixel positions must stay clear of the bilinear cell edges
    identity = torch.tensor(IDENTITY_AFFINE, dtype=torch.float64).repeat(b, 1)
    while True:
        alpha = identity + rng.uniform(-0.1, 0.1, (b, 6))
        pixels = (ops.affine_grid(alpha, (b, 1, size, size)) + 1) * (size - 1) / 2
        if (pixels - pixels.round()).abs().min() > margin:
            return alpha


def check_affine(rng: Rng) -> float:
    x = rng.uniform(0, 1, (2, 1, 8, 8))
    alpha = _off_integer_affine(rng, 2, 8)
    probe = rng.uniform(-1, 1, (2, 1, 8, 8))

    return max(
        check_gradient(lambda a: (apply_affine(x, a) * probe).sum(), alpha),
        check_gradient(lambda v: (apply_affine(v, alpha) * probe).sum(), x),
    )


def check_blur_noise(rng: Rng) -> float:
    surrogate = BlurNoiseSurrogate()
    x = rng.uniform(0, 1, (2, 1, 9, 9))
    context = surrogate.context(x, torch.zeros(2, dtype=torch.long), rng)
    probe = rng.uniform(-1, 1, (2, 1, 9, 9))
    # 3 * sigma away from an integer
    alpha = torch.tensor([[0.9, 0.05], [1.45, 0.2]], dtype=torch.float64)

    return max(
        check_gradient(lambda a: (surrogate.apply(x, a, **context) * probe).sum(), alpha),
        check_gradient(lambda v: (surrogate.apply(v, alpha, **context) * probe).sum(), x),
    )


def check_soft_shapes(rng: Rng) -> float:
    surrogate = SoftShapesSurrogate(size=32)
    colors = rng.uniform(0.2, 1, (2, 3))
    probe = rng.uniform(-1, 1, (2, 3, 32, 32))
    alpha = torch.cat(
        [rng.uniform(-0.5, 0.5, (2, 2)), rng.uniform(0.6, 1.2, (2, 1)), rng.uniform(-2, 2, (2, 3))],
        dim=1,
    )

    return check_gradient(lambda a: (surrogate.apply(None, a, colors=colors) * probe).sum(), alpha)


def check_l_cls_agat(rng: Rng) -> float:
    y = one_hot(torch.from_numpy(rng.integers(0, 5, size=3)), 5)
    y_hat = torch.softmax(rng.uniform(-2, 2, (3, 5)), dim=1)
    logits = rng.uniform(-3, 3, (3, 5))

    return max(
        check_gradient(lambda v: l_cls_agat_logits(y, y_hat, v), logits),
        check_gradient(lambda v: l_cls_agat_logits(y, y_hat, v, consistency=False), logits),
    )


def check_l_const(rng: Rng) -> float:
    weights = LossWeights(lambda1=0.5, lambda2=0.7, beta=1.0)
    z, z_gen = rng.uniform(-1, 1, (3, 6)), rng.uniform(-1, 1, (3, 6))
    a, a_gen = rng.uniform(-1, 1, (3, 4)), rng.uniform(-1, 1, (3, 4))

    return max(
        check_gradient(lambda v: l_const(z, v, a, a_gen, weights), z_gen),
        check_gradient(lambda v: l_const(z, z_gen, a, v, weights), a_gen),
    )


def check_l_ce(rng: Rng) -> float:
    y = torch.from_numpy(rng.integers(0, 4, size=5))
    return check_gradient(lambda v: l_ce(y, v), rng.uniform(-3, 3, (5, 4)))


CHECKS: dict[str, Callable[[Rng], float]] = {
    **{f"models.{arch}": model_check(arch) for arch in ARCHITECTURES},
    "surrogates.affine": check_affine,
    "surrogates.blur-noise": check_blur_noise,
    "surrogates.soft-shapes": check_soft_shapes,
    "losses.l_cls_agat": check_l_cls_agat,
    "losses.l_const": check_l_const,
    "losses.l_ce": check_l_ce,
}


def run_suite(seed: int = 0, only: str | None = None, trials: int = 50) -> list[GradcheckResult]:
    """Every check whose group name starts with `only` (all of them when None)."""
    errors = run_primitive_checks(seed, trials=trials, only=only)

    rng = Rng(seed)
    for i, (name, check) in enumerate(CHECKS.items()):
        if only and not name.startswith(only):
            continue
        errors[name] = check(rng.spawn(1000 + i))
        logger.debug(f"{name}: max relative error {errors[name]:.3e}")

    return [GradcheckResult(group=name, max_relative_error=err, passed=err < TOLERANCE) for name, err in errors.items()]


def format_table(results: list[GradcheckResult]) -> str:
    width = max([len(r.group) for r in results] + [5])
    lines = [f"{'group':<{width}}  max rel. error  status"]
    for r in results:
        lines.append(f"{r.group:<{width}}  {r.max_relative_error:14.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines) + "\n"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--only", help="restrict to groups starting with this prefix, e.g. surrogates.affine")
    parser.add_argument("--seed", type=int, default=0)


def run_gradcheck(args: argparse.Namespace) -> int:
    """Print the worst relative error per group; exit 1 if any exceeds the tolerance."""
    started = time.time()
    results = run_suite(args.seed, args.only)

    if not results:
        raise ConfigError(f"no gradient check group starts with '{args.only}'")

    print(format_table(results), end="")
    logger.info(f"{len(results)} gradient checks in {time.time() - started:.1f} s")

    return 0 if all(r.passed for r in results) else 1
