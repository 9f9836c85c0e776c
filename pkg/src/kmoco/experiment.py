"""End-to-end experiment runner: simulate, detect, correct, project, evaluate.

``evaluate`` mode scores corruption and correction across severity levels and
emits ``metrics.csv`` (one row per slice/method/severity), ``summary.json``
(bootstrap means and CIs, ANOVA and Tukey comparisons across methods), and
PNG figures for the first slice of each severity.  ``ablation`` mode first
trains one corrector per loss scenario (reconstruction only, reconstruction
plus data consistency, full), then evaluates them side by side and formats a
comparison table.

The whole run is a pure function of the config seed: every random stream is
derived from it, slices are processed in order, and the CSV is written with
fixed float formatting, so re-running a config reproduces the bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .correction import (
    CorrectorConfig,
    LossWeights,
    apply_corrector,
    hard_dc_project,
)
from .detection import DetectorConfig, detect, oracle_detector
from .fieldcore import ImageMeta, KSpace, RealImage, fft2c, ifft2c
from .layers import UNet
from .metrics import MetricReport, nmse, psnr, ssim
from .motionsim import PRESETS, LineMask, corrupt, derived_rng, sample_events
from .optim import TrainConfig, make_dataset, train_corrector
from .phantom import perturbed_phantom
from .pngio import export_png
from .stats import anova_oneway, tukey_hsd
from .weights_io import apply_weights, build_from_meta, load_weights

__all__ = ["ExperimentConfig", "ExperimentStageError", "run_experiment", "run_ablation"]

SCENARIOS = {
    "l1": LossWeights(10.0, 0.0, 0.0),
    "l1_dc": LossWeights(10.0, 0.0, 100.0),
    "full": LossWeights(10.0, 0.5, 100.0),
}


class ExperimentStageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and slice id."""

    def __init__(self, stage: str, slice_id: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed on slice {slice_id!r}: {cause}")
        self.stage = stage
        self.slice_id = slice_id
        self.cause = cause


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: Path
    mode: str = "evaluate"
    severities: tuple[str, ...] = ("minor", "moderate", "heavy")
    n_slices: int = 50
    image_size: int = 64
    detector: str = "oracle"
    detector_threshold: float = 0.5
    corrector: str | None = None
    hard_dc: bool = True
    bootstrap_iters: int = 10000
    figures: bool = True
    # ablation-mode training knobs
    train_samples: int = 200
    val_samples: int = 24
    train_steps: int = 120
    batch: int = 8
    scenarios: tuple[str, ...] = ("l1", "l1_dc", "full")

    def validate(self) -> None:
        if self.mode not in ("evaluate", "ablation"):
            raise ValueError(f"unknown experiment mode {self.mode!r}")
        for sev in self.severities:
            if sev not in PRESETS:
                raise ValueError(f"unknown severity {sev!r}")
        for sc in self.scenarios:
            if sc not in SCENARIOS:
                raise ValueError(f"unknown loss scenario {sc!r}")
        if self.detector != "oracle" and not Path(self.detector).exists():
            raise FileNotFoundError(f"detector weights not found: {self.detector}")
        if self.corrector not in (None, "identity") and not Path(self.corrector).exists():
            raise FileNotFoundError(f"corrector weights not found: {self.corrector}")


def _load_model(path: str) -> UNet:
    meta, params = load_weights(path)
    model, _ = build_from_meta(meta)
    apply_weights(model, params)
    return model


@dataclass
class _SliceResult:
    slice_id: str
    severity: str
    images: dict[str, RealImage] = field(default_factory=dict)
    values: dict[str, tuple[float, float, float]] = field(default_factory=dict)


def _evaluate_methods(cfg: ExperimentConfig, corrector, detector_model,
                      methods: list[str], severity_models: dict[str, UNet] | None = None):
    """Shared slice loop; returns per-(severity, method) results."""
    results: list[_SliceResult] = []
    for i in range(cfg.n_slices):
        slice_id = f"s{i:04d}"
        try:
            img_rng = derived_rng(cfg.seed, 2, i)
            x_gt = perturbed_phantom(img_rng, cfg.image_size)
            k_gt = fft2c(x_gt)
        except Exception as e:  # noqa: BLE001
            raise ExperimentStageError("synthesize", slice_id, e) from e
        for s_idx, severity in enumerate(cfg.severities):
            res = _SliceResult(slice_id, severity)
            try:
                cor_rng = derived_rng(cfg.seed, 3, i, s_idx)
                events = sample_events(cor_rng, PRESETS[severity], x_gt.meta)
                k_motion, m_gt = corrupt(k_gt, events)
                x_corrupt = ifft2c(k_motion)
            except Exception as e:  # noqa: BLE001
                raise ExperimentStageError("simulate", slice_id, e) from e
            res.images["corrupted"] = x_corrupt

            model = corrector
            if severity_models is not None:
                model = severity_models.get(severity, corrector)

            needs_mask = cfg.hard_dc and ("corrected_dc" in methods)
            mask = None
            if needs_mask:
                try:
                    if detector_model is None:
                        mask = oracle_detector(m_gt)
                    else:
                        _, _, mask = detect(k_motion, detector_model, cfg.detector_threshold)
                except Exception as e:  # noqa: BLE001
                    raise ExperimentStageError("detect", slice_id, e) from e

            if "corrected" in methods or "corrected_dc" in methods:
                try:
                    x_hat = x_corrupt.copy() if model == "identity" else apply_corrector(model, x_corrupt)
                except Exception as e:  # noqa: BLE001
                    raise ExperimentStageError("correct", slice_id, e) from e
                if "corrected" in methods:
                    res.images["corrected"] = x_hat
                if "corrected_dc" in methods:
                    try:
                        res.images["corrected_dc"] = hard_dc_project(x_hat, k_motion, mask)
                    except Exception as e:  # noqa: BLE001
                        raise ExperimentStageError("hard-dc", slice_id, e) from e

            try:
                for method in methods:
                    x = res.images[method]
                    res.values[method] = (
                        psnr(x, x_gt),
                        ssim(x, x_gt),
                        nmse(x, x_gt),
                    )
            except Exception as e:  # noqa: BLE001
                raise ExperimentStageError("metrics", slice_id, e) from e
            res.images["gt"] = x_gt
            results.append(res)
    return results


def _write_csv(path: Path, results: list[_SliceResult], methods: list[str],
               severities: tuple[str, ...]) -> None:
    lines = ["slice_id,method,severity,psnr_db,ssim,nmse_pct"]
    for severity in severities:
        for method in methods:
            for res in results:
                if res.severity != severity:
                    continue
                p, s, n = res.values[method]
                lines.append(f"{res.slice_id},{method},{severity},{p:.6f},{s:.6f},{n:.6f}")
    path.write_text("\n".join(lines) + "\n")


def _summarize(cfg: ExperimentConfig, results: list[_SliceResult], methods: list[str]):
    summary: dict = {
        "seed": cfg.seed,
        "bootstrap": {"kind": "percentile", "iters": cfg.bootstrap_iters},
        "groups": {},
        "tests": {},
    }
    metric_names = ("psnr_db", "ssim", "nmse_pct")
    per_group: dict[tuple[str, str], MetricReport] = {}
    for severity in cfg.severities:
        for method in methods:
            report = MetricReport()
            for res in results:
                if res.severity == severity:
                    report.add(*res.values[method])
            report.summarize(derived_rng(cfg.seed, 4), iters=cfg.bootstrap_iters)
            per_group[(severity, method)] = report
            summary["groups"][f"{severity}/{method}"] = {
                name: {"low": lo, "mean": mid, "high": hi}
                for name, (lo, mid, hi) in report.summary.items()
            }
    if len(methods) >= 2:
        for severity in cfg.severities:
            for m_idx, metric in enumerate(metric_names):
                groups = []
                for method in methods:
                    rep = per_group[(severity, method)]
                    groups.append(np.asarray([rep.psnr_db, rep.ssim, rep.nmse_pct][m_idx]))
                finite = [g[np.isfinite(g)] for g in groups]
                if any(g.size < 2 for g in finite):
                    continue
                f, p = anova_oneway(finite)
                tk = tukey_hsd(finite, rng=derived_rng(cfg.seed, 5))
                summary["tests"][f"{severity}/{metric}"] = {
                    "anova_f": f,
                    "anova_p": p,
                    "tukey": [
                        {"pair": [methods[i], methods[j]], "q": q, "p_adj": padj}
                        for (i, j), q, padj in tk.pairwise
                    ],
                }
    return summary, per_group


def _export_figures(out_dir: Path, results: list[_SliceResult], severities) -> None:
    fig_dir = out_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    for severity in severities:
        first = next(r for r in results if r.severity == severity and r.slice_id == "s0000")
        gt = first.images["gt"]
        export_png(gt, fig_dir / f"{severity}_gt.png")
        for method, img in first.images.items():
            if method == "gt":
                continue
            export_png(img, fig_dir / f"{severity}_{method}.png")
            diff = RealImage(img.meta, img.data - gt.data)
            export_png(diff, fig_dir / f"{severity}_{method}_diff.png", signed=True)


def run_experiment(cfg: ExperimentConfig) -> dict[str, Path]:
    """Evaluate corruption/correction quality across severities."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        detector_model = None if cfg.detector == "oracle" else _load_model(cfg.detector)
        if cfg.corrector is None:
            corrector = None
        elif cfg.corrector == "identity":
            corrector = "identity"
        else:
            corrector = _load_model(cfg.corrector)
    except Exception as e:  # noqa: BLE001
        raise ExperimentStageError("load-models", "-", e) from e

    methods = ["corrupted"]
    if corrector is not None:
        methods.append("corrected")
        if cfg.hard_dc:
            methods.append("corrected_dc")

    results = _evaluate_methods(cfg, corrector, detector_model, methods)
    csv_path = out_dir / "metrics.csv"
    _write_csv(csv_path, results, methods, cfg.severities)
    summary, _ = _summarize(cfg, results, methods)
    summary["mode"] = "evaluate"
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    paths = {"metrics": csv_path, "summary": summary_path}
    if cfg.figures:
        _export_figures(out_dir, results, cfg.severities)
        paths["figures"] = out_dir / "figures"
    return paths


def _format_ablation_table(per_group, scenarios, severities) -> str:
    """Three-metric comparison table, one row per loss scenario."""
    headers = ["scenario"]
    for metric in ("PSNR [dB]", "SSIM", "NMSE [%]"):
        for severity in severities:
            headers.append(f"{metric} {severity}")
    rows = []
    for scenario in scenarios:
        row = [scenario]
        for metric in ("psnr_db", "ssim", "nmse_pct"):
            for severity in severities:
                lo, mean, hi = per_group[(severity, scenario)].summary[metric]
                row.append(f"{mean:.2f} ({lo:.2f}, {hi:.2f})")
        rows.append(row)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*row) for row in rows]
    return "\n".join(lines) + "\n"


def run_ablation(cfg: ExperimentConfig) -> dict[str, Path]:
    """Train one corrector per loss scenario, then compare them."""
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set = make_dataset(int(derived_rng(cfg.seed, 10).integers(2**31)),
                             cfg.train_samples, cfg.image_size)
    val_set = make_dataset(int(derived_rng(cfg.seed, 11).integers(2**31)),
                           cfg.val_samples, cfg.image_size)
    corr_cfg = CorrectorConfig()
    train_cfg = TrainConfig(steps=cfg.train_steps, batch=cfg.batch)

    scenario_models: dict[str, UNet] = {}
    for s_idx, scenario in enumerate(cfg.scenarios):
        try:
            model, _ = train_corrector(
                train_set, val_set, corr_cfg,
                seed=int(derived_rng(cfg.seed, 12, s_idx).integers(2**31)),
                train_cfg=train_cfg, weights=SCENARIOS[scenario],
            )
        except Exception as e:  # noqa: BLE001
            raise ExperimentStageError(f"train-{scenario}", "-", e) from e
        scenario_models[scenario] = model

    # Evaluate every scenario model on the same slices.
    all_results: list[_SliceResult] = []
    methods = ["corrupted"] + list(cfg.scenarios)
    for scenario, model in scenario_models.items():
        results = _evaluate_methods(cfg, model, None, ["corrupted", "corrected"])
        if not all_results:
            for res in results:
                merged = _SliceResult(res.slice_id, res.severity)
                merged.values["corrupted"] = res.values["corrupted"]
                merged.images = res.images
                all_results.append(merged)
        for res, merged in zip(results, all_results):
            merged.values[scenario] = res.values["corrected"]

    csv_path = out_dir / "metrics.csv"
    _write_csv(csv_path, all_results, methods, cfg.severities)
    summary, per_group = _summarize(cfg, all_results, methods)
    summary["mode"] = "ablation"
    summary["scenarios"] = list(cfg.scenarios)
    summary_path = out_dir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    table_path = out_dir / "ablation_table.txt"
    table_path.write_text(_format_ablation_table(per_group, cfg.scenarios, cfg.severities))
    return {"metrics": csv_path, "summary": summary_path, "table": table_path}
