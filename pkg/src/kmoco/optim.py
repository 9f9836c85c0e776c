"""Adam optimizer, synthetic dataset generation, and the two training loops."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .correction import CorrectorConfig, FeatureExtractor, LossWeights, build_corrector, total_loss
from .detection import DetectorConfig, build_detector, detect, kspace_feature, seg_loss
from .fieldcore import ImageMeta, KSpace, fft2c, ifft2c
from .layers import UNet
from .motionsim import PRESETS, LineMask, corrupt, derived_rng, sample_events
from .phantom import perturbed_phantom

__all__ = [
    "Adam",
    "TrainingDivergedError",
    "TrainSample",
    "make_dataset",
    "TrainConfig",
    "train_corrector",
    "train_detector",
    "line_f1",
]


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss turns non-finite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss={value}")
        self.step = step


class Adam:
    """Adam with optional global gradient-norm clipping."""

    def __init__(self, params: list[Tensor], lr: float = 2e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = 1.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        if self.clip_norm is not None:
            total = 0.0
            for p in self.params:
                if p.grad is not None:
                    total += float(np.sum(p.grad.astype(np.float64) ** 2))
            norm = np.sqrt(total)
            scale = 1.0 if norm <= self.clip_norm else self.clip_norm / norm
        else:
            scale = 1.0
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad * p.data.dtype.type(scale)
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.data.dtype)


@dataclass
class TrainSample:
    """One paired slice: clean image, corrupted image, k-space, line mask."""

    x_gt: np.ndarray
    x_corrupt: np.ndarray
    k_motion: np.ndarray
    mask_lines: np.ndarray
    severity: str
    meta: ImageMeta


def make_dataset(seed: int, n: int, size: int = 64,
                 severities: tuple[str, ...] = ("minor", "moderate", "heavy"),
                 spacing_mm: float = 1.0, start_index: int = 0) -> list[TrainSample]:
    """Deterministic corrupted/clean pairs; slice i uses stream (seed, i)."""
    samples = []
    for i in range(n):
        rng = derived_rng(seed, start_index + i)
        img = perturbed_phantom(rng, size, spacing_mm)
        severity = severities[i % len(severities)]
        events = sample_events(rng, PRESETS[severity], img.meta)
        k_motion, mask = corrupt(fft2c(img), events)
        x_corrupt = ifft2c(k_motion).data
        samples.append(
            TrainSample(img.data, x_corrupt, k_motion.data, mask.line_values, severity, img.meta)
        )
    return samples


@dataclass
class TrainConfig:
    steps: int = 200
    batch: int = 8
    lr: float = 2e-4
    betas: tuple[float, float] = (0.9, 0.999)
    clip_norm: float = 1.0
    eval_every: int = 50
    dtype: type = np.float32


def _batch_arrays(samples: list[TrainSample], idx: np.ndarray, dtype):
    xc = np.stack([samples[i].x_corrupt for i in idx])[:, None].astype(dtype)
    xg = np.stack([samples[i].x_gt for i in idx])[:, None].astype(dtype)
    masks = np.stack([samples[i].mask_lines for i in idx])[:, None, :, None].astype(dtype)
    return xc, xg, masks


def _val_l1(model: UNet, samples: list[TrainSample], dtype, batch: int = 16) -> float:
    total = 0.0
    with ad.no_grad():
        for lo in range(0, len(samples), batch):
            chunk = samples[lo : lo + batch]
            xc = np.stack([s.x_corrupt for s in chunk])[:, None].astype(dtype)
            xg = np.stack([s.x_gt for s in chunk])
            y = model(Tensor(xc)).data[:, 0]
            total += float(np.abs(y.astype(np.float64) - xg).sum()) / xg[0].size
    return total / len(samples)


def train_corrector(train_set: list[TrainSample], val_set: list[TrainSample],
                    config: CorrectorConfig, seed: int,
                    train_cfg: TrainConfig = TrainConfig(),
                    weights: LossWeights = LossWeights(),
                    mask_source: str = "ground_truth",
                    detector: UNet | None = None,
                    detector_threshold: float = 0.5) -> tuple[UNet, dict]:
    """Train the corrector; deterministic given seed.

    ``mask_source`` picks which line mask feeds the DC term: the ground-truth
    corruption mask ("ground_truth") or the detector's prediction
    ("predicted", requires ``detector``).
    """
    if mask_source not in ("ground_truth", "predicted"):
        raise ValueError(f"unknown mask_source {mask_source!r}")
    dc_masks = [s.mask_lines for s in train_set]
    if mask_source == "predicted":
        if detector is None:
            raise ValueError("mask_source='predicted' needs a detector model")
        dc_masks = []
        for s in train_set:
            k = KSpace(s.meta, s.k_motion)
            _, _, binary = detect(k, detector, detector_threshold)
            dc_masks.append(binary.line_values)

    rng = derived_rng(seed, 0)
    model = build_corrector(config, derived_rng(seed, 1), dtype=train_cfg.dtype)
    if train_set:
        model.check_input(*train_set[0].meta.shape)
    fe = FeatureExtractor(dtype=train_cfg.dtype)
    opt = Adam(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
               clip_norm=train_cfg.clip_norm)

    history = {"train_loss": [], "val": []}
    history["val"].append((0, _val_l1(model, val_set, train_cfg.dtype)))
    for step in range(1, train_cfg.steps + 1):
        idx = rng.integers(0, len(train_set), size=train_cfg.batch)
        xc, xg, _ = _batch_arrays(train_set, idx, train_cfg.dtype)
        masks = np.stack([dc_masks[i] for i in idx])[:, None, :, None].astype(train_cfg.dtype)
        opt.zero_grad()
        out = model(Tensor(xc))
        loss, _ = total_loss(out, Tensor(xg), masks, weights, fe)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(step, value)
        loss.backward()
        opt.step()
        history["train_loss"].append(value)
        if step % train_cfg.eval_every == 0 or step == train_cfg.steps:
            history["val"].append((step, _val_l1(model, val_set, train_cfg.dtype)))
    return model, history


def train_detector(train_set: list[TrainSample], val_set: list[TrainSample],
                   config: DetectorConfig, seed: int,
                   train_cfg: TrainConfig = TrainConfig(steps=600)) -> tuple[UNet, dict]:
    """Train the line detector on log-magnitude k-space features."""
    feats = [kspace_feature(KSpace(s.meta, s.k_motion)) for s in train_set]
    rng = derived_rng(seed, 0)
    model = build_detector(config, derived_rng(seed, 1), dtype=train_cfg.dtype)
    if train_set:
        model.check_input(*train_set[0].meta.shape)
    opt = Adam(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas,
               clip_norm=train_cfg.clip_norm)

    history = {"train_loss": [], "val_f1": []}
    for step in range(1, train_cfg.steps + 1):
        idx = rng.integers(0, len(train_set), size=train_cfg.batch)
        x = np.stack([feats[i] for i in idx])[:, None].astype(train_cfg.dtype)
        labels = np.stack([train_set[i].mask_lines for i in idx])[:, None, :, None]
        labels = np.broadcast_to(labels, x.shape).astype(train_cfg.dtype)
        opt.zero_grad()
        scores = model(Tensor(x))
        line_scores = scores.mean(axis=3, keepdims=True)
        pred_2d = line_scores * Tensor(np.ones((1, 1, 1, x.shape[3]), dtype=train_cfg.dtype))
        loss = seg_loss(pred_2d, Tensor(labels))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDivergedError(step, value)
        loss.backward()
        opt.step()
        history["train_loss"].append(value)
        if step % train_cfg.eval_every == 0 or step == train_cfg.steps:
            history["val_f1"].append((step, line_f1(model, val_set, config.threshold)))
    return model, history


def line_f1(model: UNet, samples: list[TrainSample], threshold: float = 0.5) -> float:
    """Line-level F1 of thresholded detections against ground-truth masks."""
    tp = fp = fn = 0
    for s in samples:
        k = KSpace(s.meta, s.k_motion)
        _, _, binary = detect(k, model, threshold)
        pred = binary.line_values > 0.5
        gt = s.mask_lines > 0.5
        tp += int(np.sum(pred & gt))
        fp += int(np.sum(pred & ~gt))
        fn += int(np.sum(~pred & gt))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 1.0
