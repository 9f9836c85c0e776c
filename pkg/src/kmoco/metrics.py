"""Image quality metrics: PSNR, SSIM, NMSE."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["psnr", "ssim", "nmse", "MetricReport"]


def _pair(x_hat, x_gt) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(x_hat, "data", x_hat), dtype=np.float64)
    b = np.asarray(getattr(x_gt, "data", x_gt), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(x_hat, x_gt, peak: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical images.

    ``peak`` defaults to the ground-truth data range (max - min).
    """
    a, b = _pair(x_hat, x_gt)
    if peak is None:
        peak = float(b.max() - b.min())
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(x_hat, x_gt, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local structural similarity, 11x11 Gaussian window, sigma 1.5.

    The dynamic range constant comes from the ground-truth data range.
    """
    a, b = _pair(x_hat, x_gt)
    if min(a.shape) < 11:
        raise ValueError(f"ssim needs images of at least 11x11, got {a.shape}")
    data_range = float(b.max() - b.min())
    if data_range == 0.0:
        data_range = 1.0
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    kern = _gaussian_kernel()

    wa = sliding_window_view(a, (11, 11))
    wb = sliding_window_view(b, (11, 11))
    mu_a = np.einsum("ijkl,kl->ij", wa, kern)
    mu_b = np.einsum("ijkl,kl->ij", wb, kern)
    aa = np.einsum("ijkl,kl->ij", wa * wa, kern)
    bb = np.einsum("ijkl,kl->ij", wb * wb, kern)
    ab = np.einsum("ijkl,kl->ij", wa * wb, kern)
    var_a = aa - mu_a**2
    var_b = bb - mu_b**2
    cov = ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def nmse(x_hat, x_gt) -> float:
    """Squared-error energy over ground-truth energy, as a percentage."""
    a, b = _pair(x_hat, x_gt)
    energy = float(np.sum(b**2))
    if energy == 0.0:
        raise ValueError("ground truth has zero energy")
    return 100.0 * float(np.sum((a - b) ** 2)) / energy


@dataclass
class MetricReport:
    """Per-slice metric values plus bootstrap summaries for one group."""

    psnr_db: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    nmse_pct: list[float] = field(default_factory=list)
    summary: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def add(self, p: float, s: float, n: float) -> None:
        if n < 0 or not (-1.0 - 1e-9 <= s <= 1.0 + 1e-9):
            raise ValueError(f"metric out of range: ssim={s}, nmse={n}")
        self.psnr_db.append(p)
        self.ssim.append(s)
        self.nmse_pct.append(n)

    def summarize(self, rng: np.random.Generator, iters: int = 10000) -> None:
        from .stats import bootstrap_ci

        for name, vals in (("psnr_db", self.psnr_db), ("ssim", self.ssim), ("nmse_pct", self.nmse_pct)):
            low, mean, high = bootstrap_ci(np.asarray(vals), iters=iters, rng=rng)
            self.summary[name] = (low, mean, high)
