"""Versioned binary weights container.

Layout (all integers little-endian):

    magic   4 bytes  b"KMC1"
    u32     metadata length, then that many bytes of utf-8 key=value lines
    u32     parameter record count
    record: u16 name length, name utf-8,
            u8 dtype tag (0 = float32, 1 = float64),
            u8 ndim, ndim x u32 dims,
            raw little-endian payload

Every length field is bounds-checked against the remaining file size before
anything is allocated.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .layers import UNet

__all__ = ["WeightsFormatError", "save_weights", "load_weights", "apply_weights", "build_from_meta"]

MAGIC = b"KMC1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
MAX_NAME = 512
MAX_NDIM = 8
MAX_DIM = 1 << 24


class WeightsFormatError(ValueError):
    pass


def _encode_meta(meta: dict[str, str]) -> bytes:
    return "\n".join(f"{k}={v}" for k, v in sorted(meta.items())).encode("utf-8")


def _decode_meta(raw: bytes) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in raw.decode("utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def save_weights(path, model: UNet, meta: dict[str, str]) -> None:
    records = list(model.named_parameters())
    blob = bytearray()
    blob += MAGIC
    mb = _encode_meta(meta)
    blob += struct.pack("<I", len(mb)) + mb
    blob += struct.pack("<I", len(records))
    for name, tensor in records:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(tensor.data)
        tag = _TAGS[arr.dtype]
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<BB", tag, arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise WeightsFormatError(
                f"truncated weights file: need {n} bytes for {what} at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load_weights(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise WeightsFormatError(f"bad magic in {path}: not a KMC1 weights file")
    meta_len = r.u("<I", "metadata length")
    if meta_len > len(buf):
        raise WeightsFormatError(f"metadata length {meta_len} exceeds file size")
    meta = _decode_meta(r.take(meta_len, "metadata"))
    count = r.u("<I", "record count")
    if count > len(buf):
        raise WeightsFormatError(f"record count {count} exceeds file size")
    params: dict[str, np.ndarray] = {}
    for i in range(count):
        name_len = r.u("<H", f"record {i} name length")
        if name_len > MAX_NAME:
            raise WeightsFormatError(f"record {i}: name length {name_len} exceeds {MAX_NAME}")
        name = r.take(name_len, f"record {i} name").decode("utf-8")
        tag = r.u("<B", f"record {i} dtype")
        if tag not in _DTYPES:
            raise WeightsFormatError(f"record {i} ({name}): unknown dtype tag {tag}")
        ndim = r.u("<B", f"record {i} ndim")
        if ndim > MAX_NDIM:
            raise WeightsFormatError(f"record {i} ({name}): ndim {ndim} exceeds {MAX_NDIM}")
        dims = []
        for d in range(ndim):
            dim = r.u("<I", f"record {i} dim {d}")
            if dim == 0 or dim > MAX_DIM:
                raise WeightsFormatError(f"record {i} ({name}): invalid dim {dim}")
            dims.append(dim)
        dtype = _DTYPES[tag]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if dims else dtype.itemsize
        payload = r.take(nbytes, f"record {i} payload")
        params[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return meta, params


def apply_weights(model: UNet, params: dict[str, np.ndarray]) -> None:
    """Copy loaded arrays into the model, validating names and shapes."""
    model_params = dict(model.named_parameters())
    missing = sorted(set(model_params) - set(params))
    extra = sorted(set(params) - set(model_params))
    if missing or extra:
        raise WeightsFormatError(f"parameter name mismatch: missing={missing}, extra={extra}")
    for name, tensor in model_params.items():
        arr = params[name]
        if arr.shape != tensor.data.shape:
            raise WeightsFormatError(
                f"shape mismatch for {name}: file {arr.shape}, model {tensor.data.shape}"
            )
        tensor.data = arr.astype(tensor.data.dtype)


def build_from_meta(meta: dict[str, str]):
    """Reconstruct a model (untrained) from a weights file's metadata block."""
    from .correction import CorrectorConfig, build_corrector
    from .detection import DetectorConfig, build_detector

    kind = meta.get("kind")
    dtype = np.float64 if meta.get("dtype") == "float64" else np.float32
    rng = np.random.default_rng(0)  # placeholder init, overwritten by apply_weights
    if kind == "detector":
        cfg = DetectorConfig(
            levels=int(meta.get("levels", 3)),
            base_channels=int(meta.get("base_channels", 8)),
            threshold=float(meta.get("threshold", 0.5)),
        )
        return build_detector(cfg, rng, dtype=dtype), cfg
    if kind == "corrector":
        attn = meta.get("attn_levels", "")
        cfg = CorrectorConfig(
            levels=int(meta.get("levels", 3)),
            base_channels=int(meta.get("base_channels", 16)),
            window_size=int(meta.get("window_size", 4)),
            heads=int(meta.get("heads", 2)),
            attn_levels=tuple(int(a) for a in attn.split(",") if a != "") if attn else None,
            mlp_ratio=float(meta.get("mlp_ratio", 2.0)),
            shifted_windows=meta.get("shifted_windows", "0") == "1",
        )
        return build_corrector(cfg, rng, dtype=dtype), cfg
    raise WeightsFormatError(f"unknown model kind {kind!r} in weights metadata")


def corrector_meta(cfg) -> dict[str, str]:
    return {
        "kind": "corrector",
        "levels": str(cfg.levels),
        "base_channels": str(cfg.base_channels),
        "window_size": str(cfg.window_size),
        "heads": str(cfg.heads),
        "attn_levels": ",".join(str(a) for a in cfg.resolved_attn_levels()),
        "mlp_ratio": str(cfg.mlp_ratio),
        "shifted_windows": "1" if cfg.shifted_windows else "0",
        "dtype": "float32",
    }


def detector_meta(cfg) -> dict[str, str]:
    return {
        "kind": "detector",
        "levels": str(cfg.levels),
        "base_channels": str(cfg.base_channels),
        "threshold": str(cfg.threshold),
        "dtype": "float32",
    }
