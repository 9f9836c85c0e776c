"""Corrupted-line detection from k-space.

A small encoder/decoder scores every k-space sample, the scores are averaged
along the readout axis so each phase-encode line gets one value, and a
threshold yields the binary corruption mask.  Training minimizes the sum of
a Dice loss and binary cross-entropy against the known line mask.  An oracle
detector (ground-truth pass-through) lets downstream stages be tested
independently of detector quality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fieldcore import ImageMeta, KSpace
from .layers import UNet
from .motionsim import LineMask

__all__ = [
    "ScoreMap",
    "DetectorConfig",
    "spatial_average",
    "threshold_mask",
    "dice_loss",
    "bce_loss",
    "seg_loss",
    "kspace_feature",
    "build_detector",
    "detect",
    "oracle_detector",
]

PROB_CLAMP = 1e-7
DICE_EPS = 1e-6


@dataclass
class ScoreMap:
    """Per-pixel detector scores on the k-space grid, clamped to [0, 1]."""

    meta: ImageMeta
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.meta.shape:
            raise ValueError(f"score map shape {self.data.shape} != {self.meta.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("score map contains non-finite values")
        self.data = np.clip(self.data, 0.0, 1.0)


@dataclass(frozen=True)
class DetectorConfig:
    levels: int = 3
    base_channels: int = 8
    threshold: float = 0.5

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("detector needs at least 2 levels")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie strictly inside (0, 1)")


def spatial_average(m_prime: ScoreMap) -> LineMask:
    """Average scores along the readout axis: one value per PE line."""
    return LineMask(m_prime.meta, m_prime.data.mean(axis=1))


def threshold_mask(soft: LineMask, t: float) -> LineMask:
    """Binarize a soft line mask: 1 where value >= t."""
    if not (0.0 < t < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return LineMask(soft.meta, (soft.line_values >= t).astype(np.float64))


def _as_tensor(x) -> tuple[Tensor, bool]:
    if isinstance(x, Tensor):
        return x, True
    return Tensor(np.asarray(x, dtype=np.float64)), False


def dice_loss(m_p, m_gt, eps: float = DICE_EPS):
    """1 - soft Dice overlap; 0 for a perfect match, approaching 1 for none."""
    p, p_t = _as_tensor(m_p)
    t, t_t = _as_tensor(m_gt)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    inter = (p * t).sum()
    denom = p.sum() + t.sum() + eps
    out = 1.0 - (2.0 * inter + eps) / denom
    return out if (p_t or t_t) else out.item()


def bce_loss(m_p, m_gt, reduction: str = "mean"):
    """Binary cross-entropy with probabilities clamped away from {0, 1}."""
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    p, p_t = _as_tensor(m_p)
    t, t_t = _as_tensor(m_gt)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    p = ad.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = t * ad.log(p) + (1.0 - t) * ad.log(1.0 - p)
    out = -(ll.mean() if reduction == "mean" else ll.sum())
    return out if (p_t or t_t) else out.item()


def seg_loss(m_p, m_gt, reduction: str = "mean"):
    """Dice plus binary cross-entropy."""
    p, p_t = _as_tensor(m_p)
    t, t_t = _as_tensor(m_gt)
    out = dice_loss(p, t) + bce_loss(p, t, reduction=reduction)
    return out if (p_t or t_t) else out.item()


def kspace_feature(k: KSpace) -> np.ndarray:
    """Detector input: log-magnitude of k-space normalized to [0, 1]."""
    feat = np.log1p(np.abs(k.data))
    peak = feat.max()
    if peak > 0:
        feat = feat / peak
    return feat


def build_detector(config: DetectorConfig, rng: np.random.Generator, dtype=np.float32) -> UNet:
    return UNet(
        rng,
        in_ch=1,
        out_ch=1,
        levels=config.levels,
        base=config.base_channels,
        sigmoid_output=True,
        dtype=dtype,
    )


def detect(
    k: KSpace, model: UNet, threshold: float = 0.5
) -> tuple[ScoreMap, LineMask, LineMask]:
    """Score k-space, pool along readout, and threshold into a binary mask."""
    model.check_input(k.meta.ny, k.meta.nx)
    feat = kspace_feature(k)
    dtype = model.head.weight.dtype
    x = Tensor(feat[None, None].astype(dtype))
    with ad.no_grad():
        scores = model(x)
    m_prime = ScoreMap(k.meta, scores.data[0, 0].astype(np.float64))
    soft = spatial_average(m_prime)
    return m_prime, soft, threshold_mask(soft, threshold)


def oracle_detector(m_gt: LineMask) -> LineMask:
    """Ground-truth pass-through, for pipeline tests without a trained model."""
    return m_gt.copy()
