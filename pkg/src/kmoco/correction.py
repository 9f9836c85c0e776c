"""Motion correction: the restoration network, its losses, and hard DC.

The corrector is a residual U-net with windowed self-attention at its
deepest levels.  Training balances three terms: mean absolute error in the
image domain, a perceptual distance built from a frozen random convolutional
feature stack, and a k-space data-consistency penalty restricted to the
corrupted lines.  At inference a hard data-consistency projection puts the
measured k-space lines back verbatim, so the network only ever contributes
the lines the detector flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor
from .fieldcore import KSpace, RealImage, fft2c, ifft2c
from .layers import UNet
from .motionsim import LineMask

__all__ = [
    "CorrectorConfig",
    "LossWeights",
    "FeatureExtractor",
    "build_corrector",
    "apply_corrector",
    "l1_loss",
    "lpips_loss",
    "dc_loss",
    "total_loss",
    "mirror_line_mask",
    "project_lines",
    "hard_dc_project",
]


@dataclass(frozen=True)
class CorrectorConfig:
    levels: int = 3
    base_channels: int = 16
    window_size: int = 4
    heads: int = 2
    attn_levels: tuple[int, ...] | None = None  # default: two deepest levels
    mlp_ratio: float = 2.0
    shifted_windows: bool = False

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("corrector needs at least 2 levels")
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")

    def resolved_attn_levels(self) -> tuple[int, ...]:
        if self.attn_levels is not None:
            return tuple(sorted(self.attn_levels))
        return tuple(range(max(0, self.levels - 2), self.levels))


@dataclass(frozen=True)
class LossWeights:
    """Balance factors for the reconstruction, perceptual, and DC terms."""

    lambda_r: float = 10.0
    lambda_l: float = 0.5
    lambda_d: float = 100.0

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_l, self.lambda_d) < 0:
            raise ValueError("loss weights must be non-negative")


class FeatureExtractor(Module):
    """Three frozen stride-2 convolution stages with fixed seeded weights.

    Stands in for a pretrained perceptual backbone: random convolutional
    features preserve enough distance structure for a loss term while
    keeping the package self-contained and bit-reproducible.
    """

    CHANNELS = (8, 16, 32)

    def __init__(self, seed: int = 1234, dtype=np.float64):
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        c_in = 1
        for c_out in self.CHANNELS:
            std = np.sqrt(2.0 / (c_in * 9))
            self.weights.append(Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)).astype(dtype)))
            self.biases.append(Tensor(np.zeros(c_out, dtype=dtype)))
            c_in = c_out

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for w, b in zip(self.weights, self.biases):
            h = ad.gelu(ad.conv2d(h, w, b, stride=2, padding=1))
            feats.append(h)
        return feats


def build_corrector(config: CorrectorConfig, rng: np.random.Generator, dtype=np.float32) -> UNet:
    return UNet(
        rng,
        in_ch=1,
        out_ch=1,
        levels=config.levels,
        base=config.base_channels,
        attn_levels=config.resolved_attn_levels(),
        window=config.window_size,
        heads=config.heads,
        mlp_ratio=config.mlp_ratio,
        shifted=config.shifted_windows,
        residual_output=True,
        zero_head=True,
        dtype=dtype,
    )


def apply_corrector(model: UNet, img: RealImage) -> RealImage:
    """Run the network on one image without building a gradient graph."""
    model.check_input(img.meta.ny, img.meta.nx)
    dtype = model.head.weight.dtype
    x = Tensor(img.data[None, None].astype(dtype))
    with ad.no_grad():
        y = model(x)
    return RealImage(img.meta, y.data[0, 0].astype(np.float64))


# -- loss terms ---------------------------------------------------------------


def _pair(a, b) -> tuple[Tensor, Tensor, bool]:
    ta = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=np.float64))
    tb = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=np.float64))
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {ta.shape} vs {tb.shape}")
    return ta, tb, isinstance(a, Tensor) or isinstance(b, Tensor)


def l1_loss(x_hat, x_gt, reduction: str = "mean"):
    """Mean (or summed) absolute difference."""
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    a, b, tensor_in = _pair(x_hat, x_gt)
    d = ad.absolute(a - b)
    out = d.mean() if reduction == "mean" else d.sum()
    return out if tensor_in else out.item()


def lpips_loss(x_hat, x_gt, fe: FeatureExtractor):
    """Sum over stages of mean squared feature-map differences."""
    a, b, tensor_in = _pair(x_hat, x_gt)
    if a.data.ndim == 2:
        a = a.reshape(1, 1, *a.shape)
        b = b.reshape(1, 1, *b.shape)
    fa = fe(a)
    with ad.no_grad():
        fb = fe(b)
    out = None
    for pa, pb in zip(fa, fb):
        term = ((pa - Tensor(pb.data)) ** 2.0).mean()
        out = term if out is None else out + term
    return out if tensor_in else out.item()


def _mask_2d(mask, full_shape: tuple[int, ...]) -> np.ndarray:
    if isinstance(mask, LineMask):
        m = mask.line_values
    else:
        m = np.asarray(mask, dtype=np.float64)
    if m.ndim == 1:
        if m.shape[0] != full_shape[-2]:
            raise ValueError(f"line mask length {m.shape[0]} != ny {full_shape[-2]}")
        m = np.repeat(m[:, None], full_shape[-1], axis=1)
    else:
        try:
            np.broadcast_shapes(m.shape, full_shape)
        except ValueError:
            raise ValueError(f"mask shape {m.shape} does not broadcast to {full_shape}") from None
    return m


def dc_loss(x_hat, x_gt, mask, reduction: str = "mean"):
    """Squared k-space error on masked lines between output and target.

    With mean reduction the sum is divided by the number of masked samples,
    keeping the term comparable across grid sizes.
    """
    a, b, tensor_in = _pair(x_hat, x_gt)
    m2 = _mask_2d(mask, a.shape)
    k_ref = ad._fft2c_array(b.data)
    out = ad.masked_kspace_mse(a, k_ref, m2.astype(a.dtype), reduction=reduction)
    return out if tensor_in else out.item()


def total_loss(x_hat, x_gt, mask, weights: LossWeights = LossWeights(),
               fe: FeatureExtractor | None = None):
    """Weighted three-term training loss; returns (total, parts dict)."""
    if fe is None:
        fe = FeatureExtractor()
    parts = {
        "l1": l1_loss(x_hat, x_gt),
        "lpips": lpips_loss(x_hat, x_gt, fe) if weights.lambda_l != 0 else None,
        "dc": dc_loss(x_hat, x_gt, mask) if weights.lambda_d != 0 else None,
    }
    total = weights.lambda_r * parts["l1"]
    if parts["lpips"] is not None:
        total = total + weights.lambda_l * parts["lpips"]
    if parts["dc"] is not None:
        total = total + weights.lambda_d * parts["dc"]
    return total, parts


# -- hard data consistency ------------------------------------------------------


def mirror_line_mask(m: LineMask) -> LineMask:
    """Union of a line mask with its conjugate mirror about the DC line.

    A real image couples k-space line l with line mirror(l): they are complex
    conjugates.  A corrupted line therefore contaminates its mirror in any
    real-valued reconstruction, so hard DC treats the pair as one unit.
    """
    ny = m.meta.ny
    idx = np.arange(ny)
    mirror = (2 * (ny // 2) - idx) % ny
    vals = np.maximum(m.line_values, m.line_values[mirror])
    return LineMask(m.meta, vals)


def project_lines(k_hat: KSpace, k_measured: KSpace, m: LineMask) -> KSpace:
    """Per-line replacement in k-space: measured where mask 0, k_hat where 1."""
    if k_hat.meta.shape != k_measured.meta.shape:
        raise ValueError("k-space grids do not match")
    m2 = m.line_values[:, None]
    return KSpace(k_measured.meta, (1.0 - m2) * k_measured.data + m2 * k_hat.data)


def hard_dc_project(x_hat: RealImage, k_measured: KSpace, m_p: LineMask) -> RealImage:
    """Restore trusted measured lines, keep network output on corrupted ones.

    Operates on the conjugate-symmetrized mask so the result is exactly real
    and the projection is exactly idempotent: a line whose mirror is
    corrupted carries corrupted information itself once the measurement is
    viewed as a real image, so the pair is replaced together.
    """
    if not m_p.is_binary():
        raise ValueError("hard DC projection requires a binary mask")
    m_sym = mirror_line_mask(m_p)
    z = project_lines(fft2c(x_hat), k_measured, m_sym)
    return ifft2c(z)
