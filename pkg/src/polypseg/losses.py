"""Differentiable losses over probability maps.

All three losses take predictions in (0, 1) and binary targets of the same
shape, and are built from tape ops so gradients flow to the prediction. The
log-based losses clamp predictions to [1e-7, 1 - 1e-7] before taking logs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .tensor import Tensor, add, clamp, log, mul, neg, pow_scalar, sub, tmean, tsum

CLAMP_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights for the hybrid loss: alpha * dice + beta * bce + gamma * focal."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.alpha == 0 and self.beta == 0 and self.gamma == 0:
            raise ConfigError("at least one loss weight must be positive")


@dataclass(frozen=True)
class FocalParams:
    """balance scales every term; focusing is the exponent on (1 - x_k)."""

    balance: float = 0.25
    focusing: float = 2.0

    def __post_init__(self):
        if self.balance <= 0:
            raise ConfigError(f"balance must be > 0, got {self.balance}")
        if self.focusing < 0:
            raise ConfigError(f"focusing must be >= 0, got {self.focusing}")


def _check_pair(pred: Tensor, target: Tensor) -> None:
    if pred.data.shape != target.data.shape:
        raise DimensionError(
            f"prediction shape {pred.data.shape} != target shape {target.data.shape}")
    if pred.data.size == 0:
        raise DimensionError("empty prediction")
    tv = target.data
    if not np.all((tv == 0) | (tv == 1)):
        raise ValidationError("target must be binary (all values 0 or 1)")


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Pixel-mean binary cross-entropy on clamped predictions."""
    _check_pair(pred, target)
    p = clamp(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
    one = Tensor(np.ones((), dtype=pred.data.dtype))
    term = add(mul(target, log(p)), mul(sub(one, target), log(sub(one, p))))
    return tmean(neg(term))


def dice_loss(pred: Tensor, target: Tensor, eps: float = 1.0) -> Tensor:
    """1 - (2*sum(p*t) + eps) / (sum(p^2) + sum(t^2) + eps), summed over the
    whole batch. A perfect binary prediction gives exactly 0."""
    _check_pair(pred, target)
    if eps <= 0:
        raise ConfigError(f"dice smoothing must be > 0, got {eps}")
    one = Tensor(np.ones((), dtype=pred.data.dtype))
    epst = Tensor(np.asarray(eps, dtype=pred.data.dtype))
    inter = tsum(mul(pred, target))
    denom = add(add(tsum(mul(pred, pred)), tsum(mul(target, target))), epst)
    ratio = mul(add(add(inter, inter), epst), pow_scalar(denom, -1.0))
    return sub(one, ratio)


def focal_loss(pred: Tensor, target: Tensor, params: FocalParams = FocalParams()) -> Tensor:
    """Pixel-mean balance * (1 - x)^focusing * (-log x), where x is the
    predicted probability of the true class. With focusing=0 and balance=1
    this reduces bitwise to bce_loss (same clamp, same log arguments)."""
    _check_pair(pred, target)
    p = clamp(pred, CLAMP_EPS, 1.0 - CLAMP_EPS)
    one = Tensor(np.ones((), dtype=pred.data.dtype))
    x = add(mul(target, p), mul(sub(one, target), sub(one, p)))
    weighted = mul(pow_scalar(sub(one, x), params.focusing), neg(log(x)))
    if params.balance != 1.0:
        weighted = mul(Tensor(np.asarray(params.balance, dtype=pred.data.dtype)), weighted)
    return tmean(weighted)


def hybrid_loss(pred: Tensor, target: Tensor, weights: LossWeights = LossWeights(),
                focal: FocalParams = FocalParams(), dice_eps: float = 1.0) -> Tensor:
    """alpha * dice + beta * bce + gamma * focal. Zero-weight components are
    skipped entirely, not multiplied by zero."""
    parts = []
    dtype = pred.data.dtype
    if weights.alpha > 0:
        parts.append(mul(Tensor(np.asarray(weights.alpha, dtype=dtype)), dice_loss(pred, target, eps=dice_eps)))
    if weights.beta > 0:
        parts.append(mul(Tensor(np.asarray(weights.beta, dtype=dtype)), bce_loss(pred, target)))
    if weights.gamma > 0:
        parts.append(mul(Tensor(np.asarray(weights.gamma, dtype=dtype)), focal_loss(pred, target, focal)))
    total = parts[0]
    for part in parts[1:]:
        total = add(total, part)
    return total
