"""Training objective: clipped MSE plus a margin-contrastive rank term.

The MSE term ignores samples whose absolute error is at or below the clip
threshold tau (strict inequality activates a sample); its indicator is
treated as constant in the backward pass. The contrastive term compares
the predicted score difference of a pair against the labeled difference
and charges only the part of the gap that exceeds the margin epsilon. The
total is beta * mse + gamma * (mean over the sampled pair set).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .numerics import Array


@dataclass(frozen=True)
class LossConfig:
    beta: float = 1.0      # weight of the clipped MSE term
    gamma: float = 0.5     # weight of the contrastive term
    tau: float = 0.5       # MSE clip threshold
    epsilon: float = 0.5   # contrastive margin

    def __post_init__(self):
        for name in ("beta", "gamma", "tau", "epsilon"):
            v = getattr(self, name)
            if not (v >= 0.0):
                raise ConfigError(f"loss.{name} must be >= 0, got {v}")
        if self.beta + self.gamma <= 0.0:
            raise ConfigError(
                f"loss weights beta={self.beta}, gamma={self.gamma} cannot both be zero"
            )


def contrastive_loss(d_hat: float, d: float, epsilon: float) -> float:
    """max(0, |d_hat - d| - epsilon) on one score-difference pair."""
    return max(0.0, abs(d_hat - d) - epsilon)


def clipped_mse(y_hat: Sequence[float], y: Sequence[float], tau: float) -> float:
    """Mean squared error over samples whose |error| strictly exceeds tau."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape or y_hat.ndim != 1:
        raise ConfigError(
            f"clipped_mse: need matching 1-D arrays, got {y_hat.shape} and {y.shape}"
        )
    if y_hat.size == 0:
        raise ConfigError("clipped_mse: empty batch")
    err = y_hat - y
    active = np.abs(err) > tau
    return float(np.sum(np.where(active, err * err, 0.0)) / y_hat.size)


def total_loss(y_hat: Sequence[float], y: Sequence[float],
               pairs: Sequence[tuple[int, int]], cfg: LossConfig) -> float:
    value, _ = total_loss_grad(y_hat, y, pairs, cfg)
    return value


def total_loss_grad(y_hat: Sequence[float], y: Sequence[float],
                    pairs: Sequence[tuple[int, int]], cfg: LossConfig):
    """Loss value and its exact gradient w.r.t. the predictions.

    With gamma == 0 this returns exactly beta * clipped_mse (same floating
    point operations, no contrastive term evaluated).
    """
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = y_hat.size
    mse = clipped_mse(y_hat, y, cfg.tau)
    err = y_hat - y
    active = np.abs(err) > cfg.tau
    grad = cfg.beta * np.where(active, 2.0 * err / n, 0.0)
    if cfg.gamma == 0.0:
        return cfg.beta * mse, grad

    if len(pairs) == 0:
        raise ConfigError(
            "total_loss: contrastive weight gamma > 0 requires at least one pair"
        )
    con_sum = 0.0
    con_grad = np.zeros_like(grad)
    for i, j in pairs:
        gap = (y_hat[i] - y_hat[j]) - (y[i] - y[j])
        excess = abs(gap) - cfg.epsilon
        if excess > 0.0:
            con_sum += excess
            sign = 1.0 if gap > 0.0 else -1.0
            con_grad[i] += sign
            con_grad[j] -= sign
    n_pairs = len(pairs)
    value = cfg.beta * mse + cfg.gamma * (con_sum / n_pairs)
    grad = grad + cfg.gamma * con_grad / n_pairs
    return value, grad
