"""Analytic head phantom built from ellipses, plus a jittered variant.

The ellipse table follows the familiar ten-ellipse head layout with
high-contrast intensities, adjusted so the set is exactly left-right
symmetric (the two ventricles share axes, the bottom trio sits at mirrored
offsets).  Pixels are rendered by supersampling, so edges carry fractional
coverage values and the image is consistent across resolutions.
"""

from __future__ import annotations

import numpy as np

from .fieldcore import ImageMeta, RealImage

__all__ = ["ELLIPSES", "phantom", "perturbed_phantom"]

# Columns: additive intensity, semi-axis a (x), semi-axis b (y), x0, y0, angle in degrees.
ELLIPSES = np.array(
    [
        [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
        [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
        [-0.2, 0.16, 0.41, 0.22, 0.0, -18.0],
        [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
        [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
        [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
        [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
        [0.1, 0.046, 0.023, -0.07, -0.605, 0.0],
        [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
        [0.1, 0.046, 0.023, 0.07, -0.605, 0.0],
    ]
)

SUPERSAMPLE = 8


def _render(ellipses: np.ndarray, n: int, super_factor: int = SUPERSAMPLE) -> np.ndarray:
    """Rasterize on an n x n grid spanning [-1, 1], area-weighted edges."""
    m = n * super_factor
    coords = -1.0 + (2.0 * np.arange(m) + 1.0) / m
    xg, yg = np.meshgrid(coords, coords)
    hi = np.zeros((m, m), dtype=np.float64)
    for amp, a, b, x0, y0, phi_deg in ellipses:
        phi = np.deg2rad(phi_deg)
        c, s = np.cos(phi), np.sin(phi)
        xr = (xg - x0) * c + (yg - y0) * s
        yr = -(xg - x0) * s + (yg - y0) * c
        hi += amp * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    return hi.reshape(n, super_factor, n, super_factor).mean(axis=(1, 3))


def phantom(n: int, spacing_mm: float = 1.0) -> RealImage:
    """The standard test object on an n x n grid, values in [0, 1]."""
    data = np.clip(_render(ELLIPSES, n), 0.0, 1.0)
    return RealImage(ImageMeta(n, n, spacing_mm), data)


def perturbed_phantom(rng: np.random.Generator, n: int, spacing_mm: float = 1.0) -> RealImage:
    """Phantom with jittered ellipse centers/axes (+-5%) and intensities (+-10%)."""
    e = ELLIPSES.copy()
    rows = e.shape[0]
    e[:, 0] *= 1.0 + rng.uniform(-0.10, 0.10, rows)
    e[:, 1] *= 1.0 + rng.uniform(-0.05, 0.05, rows)
    e[:, 2] *= 1.0 + rng.uniform(-0.05, 0.05, rows)
    e[:, 3] += rng.uniform(-0.05, 0.05, rows)
    e[:, 4] += rng.uniform(-0.05, 0.05, rows)
    data = np.clip(_render(e, n), 0.0, 1.0)
    return RealImage(ImageMeta(n, n, spacing_mm), data)
