"""Hybrid focal loss family and the weighted cross-entropy baseline.

All losses take a probability tensor ``p`` of shape (N, 1, H, W) (or any
shape with a leading batch axis) and a binary numpy array ``g`` of the same
shape. Pixel terms are summed within an image, then averaged over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor


@dataclass
class LossConfig:
    alpha_tv: float = 0.3
    beta_tv: float = 0.7
    gamma_ft: float = 0.75
    alpha_fl: float = 1.0
    gamma_fl: float = 2.0
    lam: float = 0.001
    C: float = 1e-7
    clamp_eps: float = 1e-7

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if abs(self.alpha_tv + self.beta_tv - 1.0) > 1e-12:
            raise ValueError(f"alpha_tv + beta_tv must equal 1, got {self.alpha_tv} + {self.beta_tv}")
        if self.alpha_tv < 0 or self.beta_tv < 0:
            raise ValueError("alpha_tv, beta_tv: must be non-negative")
        if self.gamma_ft <= 0:
            raise ValueError("gamma_ft: must be > 0")
        if self.gamma_fl < 0:
            raise ValueError("gamma_fl: must be >= 0")
        if self.lam < 0:
            raise ValueError("lam: must be >= 0")
        if self.C <= 0:
            raise ValueError("C: must be > 0")
        if not 0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps: must lie in (0, 0.5)")


def _check(p: Tensor, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != p.shape:
        raise ValueError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    if not np.all((g == 0) | (g == 1)):
        raise ValueError("ground truth must be binary (0/1)")
    return g


def _pixel_axes(p: Tensor):
    return tuple(range(1, p.ndim)) if p.ndim > 1 else None


def _batch_mean(per_image: Tensor) -> Tensor:
    return T.mean(per_image) if per_image.ndim else per_image


def focal_loss(p, g, alpha: float = 1.0, gamma: float = 2.0, clamp_eps: float = 1e-7) -> Tensor:
    p = as_tensor(p)
    g = _check(p, g)
    pc = T.clip(p, clamp_eps, 1.0 - clamp_eps)
    q = 1.0 - pc
    pos = T.power(q, gamma) * g * T.log(pc)
    neg = T.power(pc, gamma) * (1.0 - g) * T.log(q)
    per_image = T.tsum(pos + neg, _pixel_axes(p)) * (-alpha)
    return _batch_mean(per_image)


def tversky_index(p, g, alpha: float = 0.3, beta: float = 0.7) -> float:
    """Soft Tversky index of a whole map (1.0 when both maps are empty)."""
    p = np.asarray(p.data if isinstance(p, Tensor) else p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    if abs(alpha + beta - 1.0) > 1e-12:
        raise ValueError("alpha + beta must equal 1")
    inter = float((p * g).sum())
    fp = float((p * (1 - g)).sum())
    fn = float(((1 - p) * g).sum())
    denom = inter + alpha * fp + beta * fn
    if denom == 0:
        return 1.0
    return inter / denom


def focal_tversky_loss(p, g, cfg: LossConfig = None) -> Tensor:
    """``((TP + a*sum(FP^2) + b*sum(FN^2) + C) / (TP + C)) ** gamma`` per image.

    The false-positive and false-negative terms are squared per pixel before
    summing. The minimum is 1, reached with zero soft FP and FN mass.
    """
    cfg = cfg or LossConfig()
    p = as_tensor(p)
    g = _check(p, g)
    axes = _pixel_axes(p)
    tp = T.tsum(p * g, axes)
    fp = T.tsum(T.power(p * (1.0 - g), 2.0), axes)
    fn = T.tsum(T.power((1.0 - p) * g, 2.0), axes)
    ratio = (tp + fp * cfg.alpha_tv + fn * cfg.beta_tv + cfg.C) / (tp + cfg.C)
    return _batch_mean(T.power(ratio, cfg.gamma_ft))


def hybrid_focal_loss(p, g, cfg: LossConfig = None) -> Tensor:
    cfg = cfg or LossConfig()
    ft = focal_tversky_loss(p, g, cfg)
    if cfg.lam == 0:
        return ft
    fl = focal_loss(p, g, cfg.alpha_fl, cfg.gamma_fl, cfg.clamp_eps)
    return ft + fl * cfg.lam


def weighted_ce(p, g, clamp_eps: float = 1e-7) -> Tensor:
    """Class-balanced cross-entropy with ``beta = |negatives| / |all|`` per image."""
    p = as_tensor(p)
    g = _check(p, g)
    if g.size == 0 or (p.ndim > 1 and np.prod(g.shape[1:]) == 0):
        raise ValueError("weighted_ce: empty image")
    axes = _pixel_axes(p)
    if axes is None:
        beta = np.asarray(1.0 - g.mean())
    else:
        beta = 1.0 - g.mean(axis=axes, keepdims=True)
    pc = T.clip(p, clamp_eps, 1.0 - clamp_eps)
    pos = g * T.log(pc) * beta
    neg = (1.0 - g) * T.log(1.0 - pc) * (1.0 - beta)
    per_image = T.tsum(pos + neg, axes) * -1.0
    return _batch_mean(per_image)


LOSSES = {
    "hfl": hybrid_focal_loss,
    "ft": focal_tversky_loss,
    "focal": lambda p, g, cfg=None: focal_loss(
        p, g, (cfg or LossConfig()).alpha_fl, (cfg or LossConfig()).gamma_fl, (cfg or LossConfig()).clamp_eps
    ),
    "wce": lambda p, g, cfg=None: weighted_ce(p, g, (cfg or LossConfig()).clamp_eps),
}


def get_loss(name: str):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
