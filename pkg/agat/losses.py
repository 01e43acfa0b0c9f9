"""Scalar objectives of attribute-guided adversarial training.

All losses take float64 tensors. `reduction="none"` returns one value per
sample, which the inner attribute loop needs; the default is the batch mean.
"""

import torch
import torch.nn.functional as F

from pydantic import BaseModel, Field

from .errors import ShapeError


ROW_SUM_TOLERANCE = 1e-6


class LossWeights(BaseModel):
    lambda1: float = Field(gt=0.0, le=1.0)
    lambda2: float = Field(gt=0.0, le=1.0)
    beta: float = Field(gt=0.0)


def _reduce(per_sample: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return per_sample.mean()
    if reduction == "none":
        return per_sample
    raise ValueError(f"unknown reduction '{reduction}'")


def _rows(t: torch.Tensor) -> torch.Tensor:
    # a bare vector is a batch of one
    return t.reshape(1, -1) if t.dim() < 2 else t.reshape(t.shape[0], -1)


def squared_distance(a: torch.Tensor, b: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"cannot compare shapes {tuple(a.shape)} and {tuple(b.shape)}")
    return _reduce(((_rows(a) - _rows(b)) ** 2).sum(dim=1), reduction)


def l_feat(z: torch.Tensor, z_gen: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    return squared_distance(z, z_gen, reduction)


def l_attr(alpha: torch.Tensor, alpha_gen: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    return squared_distance(alpha, alpha_gen, reduction)


def l_const(
    z: torch.Tensor,
    z_gen: torch.Tensor,
    alpha: torch.Tensor,
    alpha_gen: torch.Tensor,
    weights: LossWeights,
    reduction: str = "mean",
) -> torch.Tensor:
    return weights.lambda1 * l_feat(z, z_gen, reduction) + weights.lambda2 * l_attr(alpha, alpha_gen, reduction)


def _check_distribution(name: str, p: torch.Tensor) -> None:
    err = (p.sum(dim=-1) - 1).abs().max().item() if p.numel() else 0.0
    if err > ROW_SUM_TOLERANCE:
        raise ValueError(f"{name} rows must sum to 1 (off by {err:.3e})")


def soft_cross_entropy(target: torch.Tensor, proba: torch.Tensor) -> torch.Tensor:
    """-sum(target * log(proba)) per row, with 0 * log(0) taken as 0."""
    return -torch.special.xlogy(target, proba).sum(dim=-1)


def l_cls_agat(
    y: torch.Tensor,
    y_hat: torch.Tensor,
    y_gen_proba: torch.Tensor,
    consistency: bool = True,
    reduction: str = "mean",
) -> torch.Tensor:
    """Cross-entropy of the generated prediction against the hard label, plus
    against the source prediction `y_hat` (held constant) when `consistency` is on.
    """
    if y.shape != y_gen_proba.shape or y_hat.shape != y_gen_proba.shape:
        raise ShapeError(f"label shapes {tuple(y.shape)}, {tuple(y_hat.shape)}, {tuple(y_gen_proba.shape)} differ")

    _check_distribution("y_gen_proba", y_gen_proba)
    _check_distribution("y_hat", y_hat)

    loss = soft_cross_entropy(y, y_gen_proba)
    if consistency:
        loss = loss + soft_cross_entropy(y_hat.detach(), y_gen_proba)

    return _reduce(loss, reduction)


def l_cls_agat_logits(
    y: torch.Tensor,
    y_hat: torch.Tensor,
    logits_gen: torch.Tensor,
    consistency: bool = True,
    reduction: str = "mean",
) -> torch.Tensor:
    """`l_cls_agat` with the generated prediction given as logits (log-sum-exp safe)."""
    if y.shape != logits_gen.shape or y_hat.shape != logits_gen.shape:
        raise ShapeError(f"label shapes {tuple(y.shape)}, {tuple(y_hat.shape)}, {tuple(logits_gen.shape)} differ")

    _check_distribution("y_hat", y_hat)

    log_p = F.log_softmax(logits_gen, dim=-1)
    loss = -(y * log_p).sum(dim=-1)
    if consistency:
        loss = loss - (y_hat.detach() * log_p).sum(dim=-1)

    return _reduce(loss, reduction)


def l_agat(cls: torch.Tensor, const: torch.Tensor, beta: float) -> torch.Tensor:
    return cls - beta * const


def l_ce(y: torch.Tensor, logits: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Softmax cross-entropy for integer labels or one-hot / soft targets."""
    if y.dtype.is_floating_point:
        if y.shape != logits.shape:
            raise ShapeError(f"targets {tuple(y.shape)} do not match logits {tuple(logits.shape)}")
    elif y.shape != logits.shape[:1]:
        raise ShapeError(f"{y.shape[0] if y.dim() else 0} labels for {logits.shape[0]} logit rows")

    return F.cross_entropy(logits, y, reduction=reduction)


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    return F.one_hot(labels.long(), num_classes).to(torch.float64)
