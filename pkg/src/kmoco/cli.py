"""Command-line interface.

Subcommands: phantom, simulate, detect, train, correct, evaluate, experiment,
export-png.  Failures exit nonzero and print ``error:<category>: message`` to
stderr so scripts can branch on the category.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError, get_bool, get_float, get_int, get_list, get_str
from .correction import CorrectorConfig, hard_dc_project
from .detection import DetectorConfig, detect
from .experiment import SCENARIOS, ExperimentConfig, ExperimentStageError, run_ablation, run_experiment
from .fieldcore import KSpace, RealImage, fft2c, ifft2c
from .metrics import nmse, psnr, ssim
from .motionsim import PRESETS, InfeasibleGeometryError, SeverityPreset, corrupt, derived_rng, sample_events
from .nifti import NiftiFormatError, load_nifti_slice
from .optim import TrainConfig, TrainingDivergedError, make_dataset, train_corrector, train_detector
from .phantom import perturbed_phantom, phantom
from .pngio import export_png
from .rawio import RawFormatError, load_mask, load_raw, save_mask, save_raw
from .stats import anova_oneway, bootstrap_ci, tukey_hsd
from .weights_io import (
    WeightsFormatError,
    apply_weights,
    build_from_meta,
    corrector_meta,
    detector_meta,
    load_weights,
    save_weights,
)

_ERROR_CATEGORIES = [
    (InfeasibleGeometryError, "infeasible", 5),
    (TrainingDivergedError, "divergence", 6),
    (ExperimentStageError, "stage", 7),
    (WeightsFormatError, "format", 4),
    (RawFormatError, "format", 4),
    (NiftiFormatError, "format", 4),
    (ConfigError, "config", 3),
    (FileNotFoundError, "io", 3),
    (OSError, "io", 3),
    (ValueError, "invalid", 4),
]


def _preset_from_config(cfg: dict, name: str) -> SeverityPreset:
    base = PRESETS[name]
    return SeverityPreset(
        name=name,
        n_slabs=get_int(cfg, "n_slabs", base.n_slabs),
        width_min=get_int(cfg, "width_min", base.width_min),
        width_max=get_int(cfg, "width_max", base.width_max),
        rot_max_deg=get_float(cfg, "rot_max_deg", base.rot_max_deg),
        trans_max_mm=get_float(cfg, "trans_max_mm", base.trans_max_mm),
        center_band_frac=get_float(cfg, "center_band_frac", base.center_band_frac),
    )


def _cmd_phantom(args) -> int:
    if args.seed is None:
        img = phantom(args.size, args.spacing)
    else:
        img = perturbed_phantom(derived_rng(args.seed, 0), args.size, args.spacing)
    save_raw(args.out, img)
    print(f"wrote {args.out} ({args.size}x{args.size})")
    return 0


def _cmd_simulate(args) -> int:
    if args.input:
        img = load_raw(args.input)
        if not isinstance(img, RealImage):
            raise RawFormatError(f"{args.input} holds k-space, expected a real image")
    else:
        img = perturbed_phantom(derived_rng(args.seed, 0), args.size, args.spacing)
    overrides = cfgmod.load_config(args.config) if args.config else {}
    preset = _preset_from_config(overrides, args.severity)
    rng = derived_rng(args.seed, 1)
    events = sample_events(rng, preset, img.meta)
    k_motion, mask = corrupt(fft2c(img), events)
    save_raw(args.out_kspace, k_motion)
    save_mask(args.out_mask, mask)
    if args.out_image:
        save_raw(args.out_image, ifft2c(k_motion))
    if args.out_clean:
        save_raw(args.out_clean, img)
    n_lines = int(mask.line_values.sum())
    print(f"severity={args.severity} corrupted_lines={n_lines}/{img.meta.ny}")
    return 0


def _cmd_detect(args) -> int:
    k = load_raw(args.input)
    if not isinstance(k, KSpace):
        raise RawFormatError(f"{args.input} holds a real image, expected k-space")
    meta, params = load_weights(args.weights)
    model, _ = build_from_meta(meta)
    apply_weights(model, params)
    _, soft, binary = detect(k, model, args.threshold)
    save_mask(args.out_mask, binary)
    n_lines = int(binary.line_values.sum())
    print(f"detected {n_lines} corrupted lines of {k.meta.ny}")
    return 0


def _cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    model_kind = get_str(cfg, "model", "corrector")
    size = get_int(cfg, "image_size", 64)
    severities = tuple(get_list(cfg, "severities", ["minor", "moderate", "heavy"]))
    n_train = get_int(cfg, "train_samples", 500)
    n_val = get_int(cfg, "val_samples", 100)
    train_cfg = TrainConfig(
        steps=get_int(cfg, "steps", 200 if model_kind == "corrector" else 600),
        batch=get_int(cfg, "batch", 8),
        lr=get_float(cfg, "lr", 2e-4),
        eval_every=get_int(cfg, "eval_every", 50),
    )
    train_set = make_dataset(args.seed, n_train, size, severities)
    val_set = make_dataset(args.seed + 1, n_val, size, severities)

    if model_kind == "detector":
        det_cfg = DetectorConfig(
            levels=get_int(cfg, "levels", 3),
            base_channels=get_int(cfg, "base_channels", 8),
            threshold=get_float(cfg, "threshold", 0.5),
        )
        model, history = train_detector(train_set, val_set, det_cfg, args.seed, train_cfg)
        save_weights(args.out, model, detector_meta(det_cfg))
        f1 = history["val_f1"][-1][1]
        print(f"trained detector: steps={train_cfg.steps} val_f1={f1:.4f}")
    elif model_kind == "corrector":
        corr_cfg = CorrectorConfig(
            levels=get_int(cfg, "levels", 3),
            base_channels=get_int(cfg, "base_channels", 16),
            window_size=get_int(cfg, "window_size", 4),
            heads=get_int(cfg, "heads", 2),
            shifted_windows=get_bool(cfg, "shifted_windows", False),
        )
        scenario = get_str(cfg, "scenario", "full")
        if scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
        mask_source = get_str(cfg, "mask_source", "ground_truth")
        detector_model = None
        det_path = get_str(cfg, "detector_weights", "")
        if det_path:
            meta, params = load_weights(det_path)
            detector_model, _ = build_from_meta(meta)
            apply_weights(detector_model, params)
        model, history = train_corrector(
            train_set, val_set, corr_cfg, args.seed, train_cfg,
            weights=SCENARIOS[scenario], mask_source=mask_source,
            detector=detector_model,
        )
        save_weights(args.out, model, corrector_meta(corr_cfg))
        v0 = history["val"][0][1]
        v1 = history["val"][-1][1]
        print(f"trained corrector: steps={train_cfg.steps} val_l1 {v0:.5f} -> {v1:.5f}")
    else:
        raise ConfigError(f"unknown model kind {model_kind!r}")
    return 0


def _cmd_correct(args) -> int:
    img = load_raw(args.input)
    if not isinstance(img, RealImage):
        raise RawFormatError(f"{args.input} holds k-space, expected a real image")
    if args.weights == "identity":
        x_hat = img.copy()
    else:
        meta, params = load_weights(args.weights)
        model, _ = build_from_meta(meta)
        apply_weights(model, params)
        from .correction import apply_corrector

        x_hat = apply_corrector(model, img)
    if args.hard_dc == "on":
        if not args.kspace or not args.mask:
            raise ConfigError("--hard-dc on requires --kspace and --mask")
        k = load_raw(args.kspace)
        if not isinstance(k, KSpace):
            raise RawFormatError(f"{args.kspace} holds a real image, expected k-space")
        mask = load_mask(args.mask)
        x_hat = hard_dc_project(x_hat, k, mask)
    save_raw(args.out, x_hat)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    pred_dir = Path(args.pred_dir)
    gt_dir = Path(args.gt_dir)
    rows = []
    names = sorted(p.name for p in pred_dir.glob("*.raw"))
    if not names:
        raise FileNotFoundError(f"no .raw files in {pred_dir}")
    for name in names:
        gt_path = gt_dir / name
        if not gt_path.exists():
            raise FileNotFoundError(f"missing ground truth for {name}")
        pred = load_raw(pred_dir / name)
        gt = load_raw(gt_path)
        # Optional naming convention: <slice>__<method>__<severity>.raw
        parts = name[:-4].split("__")
        slice_id, method, severity = (parts + ["unknown", "unknown"])[:3]
        rows.append((slice_id, method, severity, psnr(pred, gt), ssim(pred, gt), nmse(pred, gt)))
    lines = ["slice_id,method,severity,psnr_db,ssim,nmse_pct"]
    for r in rows:
        lines.append(f"{r[0]},{r[1]},{r[2]},{r[3]:.6f},{r[4]:.6f},{r[5]:.6f}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    if args.summary:
        import json

        vals = {"psnr_db": [r[3] for r in rows], "ssim": [r[4] for r in rows],
                "nmse_pct": [r[5] for r in rows]}
        rng = derived_rng(args.seed, 0)
        summary = {"bootstrap": {"kind": "percentile", "iters": 10000}}
        for k, v in vals.items():
            arr = np.asarray([x for x in v if np.isfinite(x)])
            if arr.size:
                lo, mean, hi = bootstrap_ci(arr, rng=rng)
                summary[k] = {"low": lo, "mean": mean, "high": hi}
        Path(args.summary).write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"evaluated {len(rows)} images -> {args.out}")
    return 0


def _cmd_experiment(args) -> int:
    cfg = cfgmod.load_config(args.config)
    exp = ExperimentConfig(
        seed=get_int(cfg, "seed", 0),
        out_dir=Path(args.out_dir or get_str(cfg, "out_dir")),
        mode=get_str(cfg, "mode", "evaluate"),
        severities=tuple(get_list(cfg, "severities", ["minor", "moderate", "heavy"])),
        n_slices=get_int(cfg, "n_slices", 50),
        image_size=get_int(cfg, "image_size", 64),
        detector=get_str(cfg, "detector", "oracle"),
        detector_threshold=get_float(cfg, "detector_threshold", 0.5),
        corrector=get_str(cfg, "corrector", "") or None,
        hard_dc=get_bool(cfg, "hard_dc", True),
        bootstrap_iters=get_int(cfg, "bootstrap_iters", 10000),
        figures=get_bool(cfg, "figures", True),
        train_samples=get_int(cfg, "train_samples", 200),
        val_samples=get_int(cfg, "val_samples", 24),
        train_steps=get_int(cfg, "train_steps", 120),
        batch=get_int(cfg, "batch", 8),
        scenarios=tuple(get_list(cfg, "scenarios", ["l1", "l1_dc", "full"])),
    )
    paths = run_ablation(exp) if exp.mode == "ablation" else run_experiment(exp)
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return 0


def _cmd_export_png(args) -> int:
    if args.nifti:
        img = load_nifti_slice(args.input, args.axis, args.index)
    else:
        img = load_raw(args.input)
        if isinstance(img, KSpace):
            img = RealImage(img.meta, np.log1p(np.abs(img.data)))
    export_png(img, args.out, window=args.window, level=args.level, signed=args.signed)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kmoco",
        description="Simulate, detect, and correct rigid-motion artifacts in 2D MRI k-space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a head phantom image")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--spacing", type=float, default=1.0, help="pixel spacing in mm")
    p.add_argument("--seed", type=int, default=None, help="jitter the ellipses with this seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("simulate", help="corrupt an image with rigid-motion artifacts")
    p.add_argument("--input", help="input image (.raw); omit to synthesize a phantom")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--severity", choices=sorted(PRESETS), default="moderate")
    p.add_argument("--config", help="optional key=value overrides (n_slabs, width_min, ...)")
    p.add_argument("--out-kspace", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-image", help="also write the corrupted image")
    p.add_argument("--out-clean", help="also write the clean input image")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("detect", help="predict corrupted PE lines from k-space")
    p.add_argument("--input", required=True, help="k-space file (.raw)")
    p.add_argument("--weights", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("train", help="train the detector or corrector")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("correct", help="run the corrector, optionally with hard DC")
    p.add_argument("--input", required=True, help="corrupted image (.raw)")
    p.add_argument("--kspace", help="measured k-space (.raw), needed for hard DC")
    p.add_argument("--mask", help="corruption mask file, needed for hard DC")
    p.add_argument("--weights", required=True, help="corrector weights, or 'identity'")
    p.add_argument("--hard-dc", choices=("on", "off"), default="on")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_correct)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="optional summary JSON path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run a full evaluate/ablation experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", help="override the config's output directory")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("export-png", help="render an image or k-space magnitude as PNG")
    p.add_argument("--input", required=True)
    p.add_argument("--nifti", action="store_true", help="input is a NIfTI-1 volume")
    p.add_argument("--axis", type=int, default=2, help="NIfTI slice axis (0=x, 1=y, 2=z)")
    p.add_argument("--index", type=int, default=0, help="NIfTI slice index")
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--level", type=float, default=None)
    p.add_argument("--signed", action="store_true", help="symmetric difference-map scaling")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_png)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001
        for exc_type, category, code in _ERROR_CATEGORIES:
            if isinstance(e, exc_type):
                print(f"error:{category}: {e}", file=sys.stderr)
                return code
        print(f"error:internal: {e}", file=sys.stderr)
        return 70


if __name__ == "__main__":
    sys.exit(main())
