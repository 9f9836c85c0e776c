"""Rigid-motion corruption of k-space along the phase-encode direction.

A motion event pairs one rigid transform with a set of k-space slabs
(contiguous runs of PE lines).  Corruption replaces the lines of each slab
with the same lines of the rigidly transformed k-space, event by event, with
later events overwriting earlier ones where slabs overlap.  A protected band
around the k-space center is never touched, preserving gross image contrast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fieldcore import ImageMeta, KSpace, RealImage, RigidMotion, apply_rigid_k, fft2c

__all__ = [
    "LineMask",
    "SlabSpec",
    "MotionEvent",
    "SeverityPreset",
    "PRESETS",
    "center_band",
    "sample_event",
    "sample_events",
    "build_line_mask",
    "corrupt",
    "severity_suite",
    "derived_rng",
]


@dataclass
class LineMask:
    """One value per phase-encode line, in [0, 1]; constant along readout."""

    meta: ImageMeta
    line_values: np.ndarray

    def __post_init__(self):
        self.line_values = np.asarray(self.line_values, dtype=np.float64)
        if self.line_values.shape != (self.meta.ny,):
            raise ValueError(
                f"line mask length {self.line_values.shape} does not match ny={self.meta.ny}"
            )
        if not np.all(np.isfinite(self.line_values)):
            raise ValueError("line mask contains non-finite values")
        if self.line_values.min() < 0.0 or self.line_values.max() > 1.0:
            raise ValueError("line mask values must lie in [0, 1]")

    def as_2d(self) -> np.ndarray:
        """Broadcast to the full (ny, nx) grid, constant along readout."""
        return np.repeat(self.line_values[:, None], self.meta.nx, axis=1)

    def is_binary(self) -> bool:
        return bool(np.all((self.line_values == 0.0) | (self.line_values == 1.0)))

    def copy(self) -> "LineMask":
        return LineMask(self.meta, self.line_values.copy())


@dataclass(frozen=True)
class SlabSpec:
    """A contiguous run of PE lines: [start_line, start_line + width)."""

    start_line: int
    width: int

    def lines(self) -> range:
        return range(self.start_line, self.start_line + self.width)


@dataclass
class MotionEvent:
    """One rigid transform plus the slabs it corrupts."""

    motion: RigidMotion
    slabs: list[SlabSpec]

    def __post_init__(self):
        if not self.slabs:
            raise ValueError("a motion event needs at least one slab")


@dataclass(frozen=True)
class SeverityPreset:
    """Named corruption level: slab count, slab widths, motion amplitudes."""

    name: str
    n_slabs: int
    width_min: int = 3
    width_max: int = 7
    rot_max_deg: float = 7.0
    trans_max_mm: float = 5.0
    center_band_frac: float = 0.08

    def __post_init__(self):
        if self.n_slabs < 1:
            raise ValueError("n_slabs must be positive")
        if not (1 <= self.width_min <= self.width_max):
            raise ValueError("invalid slab width range")
        if not (0.0 <= self.center_band_frac < 1.0):
            raise ValueError("center_band_frac must lie in [0, 1)")


PRESETS: dict[str, SeverityPreset] = {
    "minor": SeverityPreset("minor", n_slabs=5),
    "moderate": SeverityPreset("moderate", n_slabs=10),
    "heavy": SeverityPreset("heavy", n_slabs=15),
}


def derived_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent child generator for (seed, stream indices)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, *stream))))


def center_band(meta: ImageMeta, frac: float = 0.08) -> range:
    """Protected PE lines around DC; roughly ``frac`` of ny, at least one."""
    width = max(1, round(frac * meta.ny))
    start = meta.ny // 2 - width // 2
    return range(start, start + width)


def _admissible_starts(meta: ImageMeta, width: int, band: range) -> np.ndarray:
    """Start lines whose slab fits the grid and misses the protected band."""
    starts = []
    for s in range(0, meta.ny - width + 1):
        if s + width <= band.start or s >= band.stop:
            starts.append(s)
    return np.asarray(starts, dtype=np.int64)


class InfeasibleGeometryError(ValueError):
    """The grid cannot host the requested slabs outside the center band."""


def sample_event(
    rng: np.random.Generator,
    preset: SeverityPreset,
    meta: ImageMeta,
    n_slabs: int = 1,
) -> MotionEvent:
    """Draw one motion event: a uniform rigid transform plus disjoint slabs.

    Rotation is uniform in [-rot_max, rot_max] degrees, translation uniform
    in [-trans_max, trans_max] mm per axis, slab widths uniform over the
    preset range, and slab starts uniform over all admissible lines.  Slabs
    within the event are disjoint; raises ``InfeasibleGeometryError`` when
    the grid cannot host them outside the protected center band.
    """
    band = center_band(meta, preset.center_band_frac)
    motion = RigidMotion(
        tx_mm=rng.uniform(-preset.trans_max_mm, preset.trans_max_mm),
        ty_mm=rng.uniform(-preset.trans_max_mm, preset.trans_max_mm),
        theta_deg=rng.uniform(-preset.rot_max_deg, preset.rot_max_deg),
    )

    admissible_total = meta.ny - len(band)
    if n_slabs * preset.width_min > admissible_total:
        raise InfeasibleGeometryError(
            f"cannot place {n_slabs} slabs of width >= {preset.width_min} "
            f"in {admissible_total} admissible lines (ny={meta.ny})"
        )

    max_tries = 200 * n_slabs
    for _ in range(max_tries):
        taken = np.zeros(meta.ny, dtype=bool)
        slabs: list[SlabSpec] = []
        ok = True
        for _ in range(n_slabs):
            width = int(rng.integers(preset.width_min, preset.width_max + 1))
            starts = _admissible_starts(meta, width, band)
            free = starts[[not taken[s : s + width].any() for s in starts]]
            if free.size == 0:
                ok = False
                break
            s = int(free[rng.integers(0, free.size)])
            taken[s : s + width] = True
            slabs.append(SlabSpec(s, width))
        if ok:
            return MotionEvent(motion, slabs)
    raise InfeasibleGeometryError(
        f"failed to place {n_slabs} disjoint slabs on ny={meta.ny} after {max_tries} tries"
    )


def sample_events(
    rng: np.random.Generator, preset: SeverityPreset, meta: ImageMeta
) -> list[MotionEvent]:
    """Draw the preset's full event list: one slab per event, one transform each.

    Slabs may overlap across events; overlaps resolve by event order during
    corruption (last writer wins).
    """
    return [sample_event(rng, preset, meta, n_slabs=1) for _ in range(preset.n_slabs)]


def build_line_mask(events: list[MotionEvent], meta: ImageMeta) -> LineMask:
    """Binary union of all slab lines across events."""
    values = np.zeros(meta.ny, dtype=np.float64)
    for ev in events:
        for slab in ev.slabs:
            if slab.start_line < 0 or slab.start_line + slab.width > meta.ny:
                raise ValueError(f"slab {slab} out of bounds for ny={meta.ny}")
            values[slab.start_line : slab.start_line + slab.width] = 1.0
    return LineMask(meta, values)


def corrupt(k_gt: KSpace, events: list[MotionEvent]) -> tuple[KSpace, LineMask]:
    """Replace slab lines with lines of the per-event transformed k-space.

    Every event transforms the clean k-space independently; its slab lines
    overwrite the running result in order.  Lines covered by no slab stay
    bit-exact copies of the input.
    """
    k_motion = k_gt.copy()
    for ev in events:
        k_moved = apply_rigid_k(k_gt, ev.motion)
        for slab in ev.slabs:
            k_motion.data[slab.start_line : slab.start_line + slab.width, :] = k_moved.data[
                slab.start_line : slab.start_line + slab.width, :
            ]
    return k_motion, build_line_mask(events, k_gt.meta)


def severity_suite(
    rng: np.random.Generator, img: RealImage
) -> dict[str, tuple[KSpace, LineMask]]:
    """Corrupt one image under every preset with independent derived streams."""
    k_gt = fft2c(img)
    root = int(rng.integers(0, 2**63 - 1))
    out: dict[str, tuple[KSpace, LineMask]] = {}
    for i, name in enumerate(("minor", "moderate", "heavy")):
        sub = derived_rng(root, i)
        events = sample_events(sub, PRESETS[name], img.meta)
        out[name] = corrupt(k_gt, events)
    return out
