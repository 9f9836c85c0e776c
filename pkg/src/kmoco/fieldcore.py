"""Image/k-space containers, centered orthonormal 2D FFTs, and rigid transforms.

Conventions used throughout the package:

* Arrays are stored row-major with shape ``(ny, nx)``: axis 0 runs along the
  phase-encode direction (one row per PE line), axis 1 along the readout
  (frequency-encode) direction.
* k-space is kept centered, with the DC sample at index
  ``(ny // 2, nx // 2)``.  Forward and inverse transforms are orthonormal,
  so Parseval holds exactly up to floating point rounding.
* Rigid transforms resample bilinearly about the grid center
  ``((nx - 1) / 2, (ny - 1) / 2)`` and fill out-of-domain samples with 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ImageMeta",
    "RealImage",
    "KSpace",
    "RigidMotion",
    "fft2c",
    "ifft2c",
    "ifft2c_complex",
    "reconstruct_real",
    "translate",
    "rotate",
    "apply_rigid_k",
]


@dataclass(frozen=True)
class ImageMeta:
    """Grid geometry: pixel counts and isotropic pixel spacing in mm."""

    nx: int
    ny: int
    spacing_mm: float = 1.0

    def __post_init__(self):
        if self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be at least 8x8, got {self.nx}x{self.ny}")
        if not np.isfinite(self.spacing_mm) or self.spacing_mm <= 0:
            raise ValueError(f"spacing_mm must be positive, got {self.spacing_mm}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)


def _check_grid(data: np.ndarray, meta: ImageMeta, what: str) -> None:
    if data.shape != meta.shape:
        raise ValueError(f"{what} shape {data.shape} does not match meta {meta.shape}")
    if not np.all(np.isfinite(data.view(np.float64) if np.iscomplexobj(data) else data)):
        raise ValueError(f"{what} contains non-finite values")


@dataclass
class RealImage:
    """A 2D spatial-domain image with physical pixel spacing."""

    meta: ImageMeta
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        _check_grid(self.data, self.meta, "RealImage")

    def copy(self) -> "RealImage":
        return RealImage(self.meta, self.data.copy())


@dataclass
class KSpace:
    """A 2D frequency-domain grid, DC component at ``(ny // 2, nx // 2)``."""

    meta: ImageMeta
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        _check_grid(self.data, self.meta, "KSpace")

    def copy(self) -> "KSpace":
        return KSpace(self.meta, self.data.copy())


@dataclass(frozen=True)
class RigidMotion:
    """In-plane rigid transform: translation in mm plus rotation in degrees."""

    tx_mm: float = 0.0
    ty_mm: float = 0.0
    theta_deg: float = 0.0

    def __post_init__(self):
        vals = (self.tx_mm, self.ty_mm, self.theta_deg)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"motion parameters must be finite, got {vals}")
        if abs(self.theta_deg) > 180.0:
            raise ValueError(f"|theta_deg| must be <= 180, got {self.theta_deg}")

    @property
    def is_identity(self) -> bool:
        return self.tx_mm == 0.0 and self.ty_mm == 0.0 and self.theta_deg == 0.0


def fft2c(img: RealImage) -> KSpace:
    """Centered orthonormal 2D Fourier transform of a real image.

    The input is de-centered, transformed with 1/sqrt(nx*ny) scaling per
    direction, and re-centered, leaving DC at ``(ny // 2, nx // 2)``.
    """
    _check_grid(img.data, img.meta, "fft2c input")
    k = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(img.data), norm="ortho"))
    return KSpace(img.meta, k)


def ifft2c_complex(k: KSpace) -> np.ndarray:
    """Inverse centered orthonormal FFT, returned as a complex array."""
    _check_grid(k.data, k.meta, "ifft2c input")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k.data), norm="ortho"))


def ifft2c(k: KSpace) -> RealImage:
    """Inverse of :func:`fft2c`; the imaginary residue is discarded.

    For Hermitian-symmetric input (any k-space produced by ``fft2c`` of a
    real image) the residue is at rounding level.  Mixed k-space, such as
    motion-corrupted data, loses Hermitian symmetry; the real part is the
    canonical real-image view of it (see :func:`reconstruct_real`).
    """
    return RealImage(k.meta, ifft2c_complex(k).real)


def reconstruct_real(k: KSpace) -> RealImage:
    """Real-part image reconstruction from possibly non-Hermitian k-space."""
    return ifft2c(k)


def _bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``data[y, x]`` at float coordinates, zero outside the grid."""
    ny, nx = data.shape
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.zeros(xs.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            w = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < nx) & (yi >= 0) & (yi < ny)
            xi_c = np.clip(xi, 0, nx - 1)
            yi_c = np.clip(yi, 0, ny - 1)
            out += np.where(valid, w * data[yi_c, xi_c], 0.0)
    return out


def translate(img: RealImage, tx_mm: float, ty_mm: float) -> RealImage:
    """Shift an image by physical millimetres with bilinear resampling.

    Integer-pixel shifts reduce to exact index shifts; samples pulled from
    outside the grid are 0.
    """
    if not (np.isfinite(tx_mm) and np.isfinite(ty_mm)):
        raise ValueError("translation must be finite")
    if tx_mm == 0.0 and ty_mm == 0.0:
        return img.copy()
    sx = tx_mm / img.meta.spacing_mm
    sy = ty_mm / img.meta.spacing_mm
    ny, nx = img.meta.shape
    ys, xs = np.mgrid[0:ny, 0:nx].astype(np.float64)
    return RealImage(img.meta, _bilinear_sample(img.data, xs - sx, ys - sy))


def rotate(img: RealImage, theta_deg: float) -> RealImage:
    """Rotate about the grid center with bilinear resampling, zero fill.

    The center ``((nx - 1) / 2, (ny - 1) / 2)`` maps the grid onto itself at
    multiples of 90 degrees, so those rotations are exact permutations.
    """
    if not np.isfinite(theta_deg) or abs(theta_deg) > 180.0:
        raise ValueError(f"|theta_deg| must be finite and <= 180, got {theta_deg}")
    if theta_deg == 0.0:
        return img.copy()
    ny, nx = img.meta.shape
    cx = (nx - 1) / 2.0
    cy = (ny - 1) / 2.0
    t = np.deg2rad(theta_deg)
    cos_t, sin_t = np.cos(t), np.sin(t)
    ys, xs = np.mgrid[0:ny, 0:nx].astype(np.float64)
    dx = xs - cx
    dy = ys - cy
    # Inverse mapping: output pixel pulls from R(-theta) applied source.
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy
    return RealImage(img.meta, _bilinear_sample(img.data, src_x, src_y))


def apply_rigid_k(k: KSpace, m: RigidMotion) -> KSpace:
    """Rigid transform of k-space routed through the image domain.

    Equivalent to inverse FFT, translate, rotate, forward FFT.  Zero motion
    returns the input unchanged (exact copy, avoiding a round trip).
    """
    if m.is_identity:
        return k.copy()
    img = ifft2c(k)
    moved = rotate(translate(img, m.tx_mm, m.ty_mm), m.theta_deg)
    return fft2c(moved)
