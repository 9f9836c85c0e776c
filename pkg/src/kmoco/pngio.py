"""Grayscale PNG export with window/level mapping and signed difference maps."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .fieldcore import RealImage

__all__ = ["export_png"]


def export_png(img: RealImage | np.ndarray, path, window: float | None = None,
               level: float | None = None, signed: bool = False) -> None:
    """Write an 8-bit grayscale PNG.

    Plain mode maps ``[level - window/2, level + window/2]`` to black..white;
    defaults cover the data range.  ``signed`` mode renders a difference map
    symmetrically about zero, so 0 lands on mid-gray.
    """
    data = np.asarray(getattr(img, "data", img), dtype=np.float64)
    if signed:
        span = float(np.abs(data).max())
        span = span if span > 0 else 1.0
        unit = 0.5 + data / (2.0 * span)
    else:
        if level is None:
            level = float(data.max() + data.min()) / 2.0
        if window is None:
            window = float(data.max() - data.min())
        if window <= 0:
            window = 1.0
        unit = (data - (level - window / 2.0)) / window
    out = np.clip(np.round(unit * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)
