"""Experiment runner: determinism, structure of outputs, error wrapping."""

import json

import numpy as np
import pytest

from kmoco.experiment import ExperimentConfig, ExperimentStageError, run_ablation, run_experiment


def tiny_config(tmp_path, **kw):
    defaults = dict(
        seed=42,
        out_dir=tmp_path / "run",
        severities=("minor", "heavy"),
        n_slices=3,
        image_size=32,
        detector="oracle",
        corrector="identity",
        hard_dc=True,
        bootstrap_iters=100,
        figures=False,
    )
    defaults.update(kw)
    return ExperimentConfig(**defaults)


class TestEvaluateMode:
    def test_csv_structure_and_methods(self, tmp_path):
        paths = run_experiment(tiny_config(tmp_path))
        lines = paths["metrics"].read_text().strip().splitlines()
        assert lines[0] == "slice_id,method,severity,psnr_db,ssim,nmse_pct"
        methods = {line.split(",")[1] for line in lines[1:]}
        assert methods == {"corrupted", "corrected", "corrected_dc"}
        severities = {line.split(",")[2] for line in lines[1:]}
        assert severities == {"minor", "heavy"}

    def test_rerun_is_byte_identical(self, tmp_path):
        a = run_experiment(tiny_config(tmp_path, out_dir=tmp_path / "a"))
        b = run_experiment(tiny_config(tmp_path, out_dir=tmp_path / "b"))
        assert a["metrics"].read_bytes() == b["metrics"].read_bytes()
        assert a["summary"].read_bytes() == b["summary"].read_bytes()

    def test_summary_contains_tests_and_groups(self, tmp_path):
        paths = run_experiment(tiny_config(tmp_path, n_slices=4))
        summary = json.loads(paths["summary"].read_text())
        assert summary["bootstrap"] == {"kind": "percentile", "iters": 100}
        group = summary["groups"]["minor/corrupted"]
        for metric in ("psnr_db", "ssim", "nmse_pct"):
            entry = group[metric]
            assert entry["low"] <= entry["mean"] <= entry["high"]
        key = "minor/nmse_pct"
        assert key in summary["tests"]
        assert 0.0 <= summary["tests"][key]["anova_p"] <= 1.0
        pairs = summary["tests"][key]["tukey"]
        assert len(pairs) == 3  # three methods pairwise

    def test_corrupted_only_run(self, tmp_path):
        cfg = tiny_config(tmp_path, corrector=None)
        paths = run_experiment(cfg)
        lines = paths["metrics"].read_text().strip().splitlines()
        methods = {line.split(",")[1] for line in lines[1:]}
        assert methods == {"corrupted"}
        summary = json.loads(paths["summary"].read_text())
        assert summary["tests"] == {}

    def test_figures_exported(self, tmp_path):
        cfg = tiny_config(tmp_path, figures=True)
        paths = run_experiment(cfg)
        figs = list(paths["figures"].glob("*.png"))
        names = {f.name for f in figs}
        assert "minor_gt.png" in names
        assert "minor_corrupted.png" in names
        assert "minor_corrupted_diff.png" in names

    def test_missing_weights_raise_stage_error(self, tmp_path):
        cfg = tiny_config(tmp_path, detector=str(tmp_path / "missing.kmc1"))
        with pytest.raises(FileNotFoundError):
            cfg.validate()

    def test_invalid_severity_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="severity"):
            tiny_config(tmp_path, severities=("extreme",)).validate()


class TestAblationMode:
    @pytest.mark.slow
    def test_ablation_trains_and_emits_table(self, tmp_path):
        cfg = tiny_config(
            tmp_path,
            mode="ablation",
            severities=("minor",),
            n_slices=2,
            image_size=32,
            train_samples=8,
            val_samples=4,
            train_steps=3,
            batch=4,
            scenarios=("l1", "l1_dc", "full"),
        )
        paths = run_ablation(cfg)
        table = paths["table"].read_text()
        for scenario in ("l1", "l1_dc", "full"):
            assert scenario in table
        assert "PSNR [dB] minor" in table
        lines = paths["metrics"].read_text().strip().splitlines()
        methods = {line.split(",")[1] for line in lines[1:]}
        assert methods == {"corrupted", "l1", "l1_dc", "full"}
        summary = json.loads(paths["summary"].read_text())
        assert summary["mode"] == "ablation"
        assert summary["scenarios"] == ["l1", "l1_dc", "full"]
