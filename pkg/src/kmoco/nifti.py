"""Minimal NIfTI-1 reader for uncompressed single-file volumes.

Supports 3D float32 and int16 volumes, which covers the public T1 brain
datasets once externally decompressed.  Header fields are bounds-checked
against the actual file size before any array is allocated.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .fieldcore import ImageMeta, RealImage

__all__ = ["NiftiFormatError", "load_nifti_slice", "write_nifti"]

HEADER_SIZE = 348
DT_INT16 = 4
DT_FLOAT32 = 16
_MAX_DIM = 100_000


class NiftiFormatError(ValueError):
    pass


def _parse_header(buf: bytes, path) -> dict:
    if len(buf) >= 2 and buf[0] == 0x1F and buf[1] == 0x8B:
        raise NiftiFormatError(
            f"{path}: gzip-compressed stream; decompress the file first"
        )
    if len(buf) < HEADER_SIZE:
        raise NiftiFormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(order + "i", buf, 0)
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise NiftiFormatError(f"{path}: malformed header (sizeof_hdr != {HEADER_SIZE})")
    magic = buf[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiFormatError(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise NiftiFormatError(f"{path}: two-file (.hdr/.img) layout is unsupported")
    dim = struct.unpack_from(order + "8h", buf, 40)
    datatype, bitpix = struct.unpack_from(order + "2h", buf, 70)
    pixdim = struct.unpack_from(order + "8f", buf, 76)
    (vox_offset,) = struct.unpack_from(order + "f", buf, 108)
    scl_slope, scl_inter = struct.unpack_from(order + "2f", buf, 112)

    ndim = dim[0]
    if ndim < 3 or ndim > 7:
        raise NiftiFormatError(f"{path}: expected a 3D volume, header says ndim={ndim}")
    shape = dim[1 : ndim + 1]
    if any(s < 1 or s > _MAX_DIM for s in shape):
        raise NiftiFormatError(f"{path}: implausible dimensions {shape}")
    if ndim > 3 and any(s != 1 for s in shape[3:]):
        raise NiftiFormatError(f"{path}: volume has non-singleton higher dimensions {shape}")
    return {
        "order": order,
        "shape": tuple(shape[:3]),
        "datatype": datatype,
        "bitpix": bitpix,
        "pixdim": pixdim[1:4],
        "vox_offset": int(vox_offset),
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
    }


def load_nifti_slice(path, axis: int, index: int) -> RealImage:
    """Extract one 2D slice from a 3D NIfTI-1 volume.

    ``axis`` indexes the NIfTI dimensions (0=x, 1=y, 2=z); in-plane spacing
    is the mean of the two remaining pixel dimensions.
    """
    path = Path(path)
    buf = path.read_bytes()
    hdr = _parse_header(buf, path)
    if hdr["datatype"] == DT_FLOAT32:
        np_dtype = np.dtype(hdr["order"] + "f4")
    elif hdr["datatype"] == DT_INT16:
        np_dtype = np.dtype(hdr["order"] + "i2")
    else:
        raise NiftiFormatError(
            f"{path}: unsupported datatype code {hdr['datatype']} (need float32 or int16)"
        )
    nxv, nyv, nzv = hdr["shape"]
    n_vox = nxv * nyv * nzv
    need = hdr["vox_offset"] + n_vox * np_dtype.itemsize
    if need > len(buf):
        raise NiftiFormatError(
            f"{path}: header implies {need} bytes but file has {len(buf)}"
        )
    if not 0 <= axis <= 2:
        raise NiftiFormatError(f"axis must be 0, 1, or 2, got {axis}")
    if not 0 <= index < hdr["shape"][axis]:
        raise NiftiFormatError(
            f"slice index {index} out of range for axis {axis} (size {hdr['shape'][axis]})"
        )

    flat = np.frombuffer(buf, dtype=np_dtype, count=n_vox, offset=hdr["vox_offset"])
    vol = flat.reshape(nzv, nyv, nxv)  # x varies fastest on disk
    if axis == 0:
        plane = vol[:, :, index]  # (z, y)
        spac = (hdr["pixdim"][1] + hdr["pixdim"][2]) / 2.0
    elif axis == 1:
        plane = vol[:, index, :]  # (z, x)
        spac = (hdr["pixdim"][0] + hdr["pixdim"][2]) / 2.0
    else:
        plane = vol[index, :, :]  # (y, x)
        spac = (hdr["pixdim"][0] + hdr["pixdim"][1]) / 2.0
    data = plane.astype(np.float64)
    if hdr["datatype"] == DT_INT16 and hdr["scl_slope"] != 0.0:
        data = data * hdr["scl_slope"] + hdr["scl_inter"]
    spacing = spac if spac > 0 else 1.0
    ny, nx = data.shape
    return RealImage(ImageMeta(nx, ny, float(spacing)), data)


def write_nifti(path, volume: np.ndarray, spacing_mm: float = 1.0) -> None:
    """Write a float32 3D volume (z, y, x order) as a minimal NIfTI-1 file."""
    vol = np.asarray(volume, dtype="<f4")
    if vol.ndim != 3:
        raise ValueError("write_nifti expects a 3D array")
    nz, ny, nx = vol.shape
    hdr = bytearray(HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, DT_FLOAT32, 32)
    struct.pack_into("<8f", hdr, 76, 1.0, spacing_mm, spacing_mm, spacing_mm, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 0.0, 0.0)
    hdr[344:348] = b"n+1\x00"
    with open(path, "wb") as f:
        f.write(bytes(hdr))
        f.write(b"\x00" * 4)  # extension flag padding to vox_offset 352
        f.write(vol.tobytes())
