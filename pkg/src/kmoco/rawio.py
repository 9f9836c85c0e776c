"""Raw image container: float32 payload plus a key=value sidecar descriptor.

The payload holds row-major little-endian float32 samples; complex grids are
stored as interleaved real/imaginary pairs.  The descriptor lives next to the
payload as ``<path>.hdr`` and is parsed and validated before the payload is
read, so a lying descriptor never triggers an allocation.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .config import format_kv, parse_kv
from .fieldcore import ImageMeta, KSpace, RealImage

__all__ = ["RawFormatError", "save_raw", "load_raw", "descriptor_path", "save_mask", "load_mask"]

_MAX_SIDE = 1 << 16


class RawFormatError(ValueError):
    pass


def descriptor_path(path) -> Path:
    return Path(str(path) + ".hdr")


def save_raw(path, obj: RealImage | KSpace) -> None:
    path = Path(path)
    if isinstance(obj, RealImage):
        dtype_tag = "f32"
        payload = obj.data.astype("<f4").tobytes()
    elif isinstance(obj, KSpace):
        dtype_tag = "c64"
        inter = np.empty((obj.meta.ny, obj.meta.nx, 2), dtype="<f4")
        inter[..., 0] = obj.data.real
        inter[..., 1] = obj.data.imag
        payload = inter.tobytes()
    else:
        raise TypeError(f"cannot save object of type {type(obj).__name__}")
    path.write_bytes(payload)
    descriptor_path(path).write_text(
        format_kv(
            {
                "nx": obj.meta.nx,
                "ny": obj.meta.ny,
                "spacing_mm": obj.meta.spacing_mm,
                "dtype": dtype_tag,
            }
        )
    )


def load_raw(path) -> RealImage | KSpace:
    path = Path(path)
    desc_file = descriptor_path(path)
    if not desc_file.exists():
        raise RawFormatError(f"missing descriptor {desc_file}")
    desc = parse_kv(desc_file.read_text())
    try:
        nx = int(desc["nx"])
        ny = int(desc["ny"])
        spacing = float(desc.get("spacing_mm", "1.0"))
        dtype_tag = desc["dtype"]
    except KeyError as e:
        raise RawFormatError(f"descriptor {desc_file} missing key {e}") from None
    if not (8 <= nx <= _MAX_SIDE and 8 <= ny <= _MAX_SIDE):
        raise RawFormatError(f"descriptor grid {nx}x{ny} out of supported range")
    if dtype_tag == "f32":
        expected = 4 * nx * ny
    elif dtype_tag == "c64":
        expected = 8 * nx * ny
    else:
        raise RawFormatError(f"unknown dtype tag {dtype_tag!r} in {desc_file}")

    actual = path.stat().st_size
    if actual != expected:
        raise RawFormatError(
            f"payload length mismatch in {path}: descriptor implies {expected} bytes, "
            f"file has {actual} (shortfall at byte {min(actual, expected)})"
        )
    buf = path.read_bytes()
    meta = ImageMeta(nx, ny, spacing)
    if dtype_tag == "f32":
        data = np.frombuffer(buf, dtype="<f4").reshape(ny, nx).astype(np.float64)
        return RealImage(meta, data)
    inter = np.frombuffer(buf, dtype="<f4").reshape(ny, nx, 2).astype(np.float64)
    return KSpace(meta, inter[..., 0] + 1j * inter[..., 1])


def save_mask(path, mask) -> None:
    """Serialize a binary line mask as its corrupted line indices plus ny."""
    lines = np.flatnonzero(mask.line_values >= 0.5)
    Path(path).write_text(
        format_kv(
            {
                "ny": mask.meta.ny,
                "nx": mask.meta.nx,
                "spacing_mm": mask.meta.spacing_mm,
                "lines": ",".join(str(i) for i in lines),
            }
        )
    )


def load_mask(path):
    from .motionsim import LineMask

    desc = parse_kv(Path(path).read_text())
    try:
        ny = int(desc["ny"])
        nx = int(desc.get("nx", ny))
        spacing = float(desc.get("spacing_mm", "1.0"))
        raw_lines = desc["lines"]
    except KeyError as e:
        raise RawFormatError(f"mask file {path} missing key {e}") from None
    values = np.zeros(ny, dtype=np.float64)
    for token in raw_lines.split(","):
        token = token.strip()
        if not token:
            continue
        idx = int(token)
        if not 0 <= idx < ny:
            raise RawFormatError(f"mask file {path}: line index {idx} out of range for ny={ny}")
        values[idx] = 1.0
    return LineMask(ImageMeta(nx, ny, spacing), values)
