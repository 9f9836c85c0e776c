"""Spatial averaging, segmentation losses, and the detection surface."""

import numpy as np
import pytest

from kmoco.autodiff import Tensor
from kmoco.detection import (
    DetectorConfig,
    ScoreMap,
    bce_loss,
    build_detector,
    detect,
    dice_loss,
    kspace_feature,
    oracle_detector,
    seg_loss,
    spatial_average,
    threshold_mask,
)
from kmoco.fieldcore import ImageMeta, KSpace, fft2c
from kmoco.motionsim import LineMask, derived_rng
from kmoco.phantom import phantom

META = ImageMeta(8, 8)
rng = np.random.default_rng(7)


def line_mask(values):
    return LineMask(ImageMeta(8, len(values)), np.asarray(values, dtype=float))


class TestSpatialAverage:
    def test_constant_map(self):
        sm = ScoreMap(META, np.full((8, 8), 0.37))
        out = spatial_average(sm)
        assert np.allclose(out.line_values, 0.37)

    def test_direct_mean_per_line(self):
        data = np.zeros((8, 8))
        data[0] = [0.2, 0.4] * 4  # mean 0.3
        data[1] = 1.0
        out = spatial_average(ScoreMap(META, data))
        assert abs(out.line_values[0] - 0.3) < 1e-12
        assert abs(out.line_values[1] - 1.0) < 1e-12
        assert np.all(out.line_values[2:] == 0.0)

    def test_permutation_invariant_within_line(self):
        data = rng.random((8, 8))
        base = spatial_average(ScoreMap(META, data)).line_values
        shuffled = data.copy()
        for row in shuffled:
            rng.shuffle(row)
        out = spatial_average(ScoreMap(META, shuffled)).line_values
        assert np.allclose(base, out)

    def test_convex_hull_property(self):
        data = rng.random((8, 8))
        out = spatial_average(ScoreMap(META, data)).line_values
        assert np.all(out >= data.min(axis=1) - 1e-12)
        assert np.all(out <= data.max(axis=1) + 1e-12)

    def test_variance_reduction(self):
        # Broadcasting the line means back over the readout axis cannot
        # increase per-pixel variance within any line.
        data = rng.random((8, 8))
        means = data.mean(axis=1, keepdims=True)
        var_before = data.var(axis=1)
        var_after = np.broadcast_to(means, data.shape).var(axis=1)
        assert np.all(var_after <= var_before + 1e-15)


class TestThreshold:
    def test_examples(self):
        soft = line_mask([0.3, 0.5, 0.9, 0, 0, 0, 0, 0])
        out = threshold_mask(soft, 0.5)
        assert list(out.line_values[:3]) == [0.0, 1.0, 1.0]

    def test_all_zero(self):
        out = threshold_mask(line_mask([0.0] * 8), 0.5)
        assert out.line_values.sum() == 0.0

    @pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
    def test_binary_fixed_point(self, t):
        binary = line_mask([0, 1, 1, 0, 1, 0, 0, 0])
        out = threshold_mask(binary, t)
        assert np.array_equal(out.line_values, binary.line_values)

    def test_threshold_range_validated(self):
        with pytest.raises(ValueError):
            threshold_mask(line_mask([0] * 8), 1.0)


class TestDice:
    def test_perfect_overlap_is_zero(self):
        m = (rng.random(32) > 0.5).astype(float)
        m[0] = 1.0
        assert abs(dice_loss(m, m)) < 1e-9

    def test_disjoint_is_almost_one(self):
        a = np.zeros(32)
        b = np.zeros(32)
        a[:8] = 1.0
        b[8:16] = 1.0
        val = dice_loss(a, b)
        assert abs(val - (1.0 - 1e-6 / (16 + 1e-6))) < 1e-12

    def test_half_overlap_hand_value(self):
        val = dice_loss(np.array([0.5, 0.5]), np.array([1.0, 0.0]))
        eps = 1e-6
        assert abs(val - (1.0 - (2 * 0.5 + eps) / (2.0 + eps))) < 1e-9

    def test_symmetric_for_binary(self):
        a = (rng.random(64) > 0.6).astype(float)
        b = (rng.random(64) > 0.6).astype(float)
        assert abs(dice_loss(a, b) - dice_loss(b, a)) < 1e-12

    def test_range_and_oracle(self):
        for _ in range(100):
            p = rng.random((4, 4))
            t = (rng.random((4, 4)) > 0.5).astype(float)
            val = dice_loss(p, t)
            eps = 1e-6
            oracle = 1.0 - (2.0 * float((p * t).sum()) + eps) / (float(p.sum()) + float(t.sum()) + eps)
            assert abs(val - oracle) < 1e-9
            assert 0.0 <= val < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_loss(np.zeros(4), np.zeros(5))


class TestBCE:
    def test_perfect_prediction_near_zero(self):
        t = (rng.random(64) > 0.5).astype(float)
        assert bce_loss(t, t) < 1e-6

    def test_half_everywhere_is_ln2(self):
        t = (rng.random(64) > 0.5).astype(float)
        assert abs(bce_loss(np.full(64, 0.5), t) - np.log(2.0)) < 1e-9

    def test_sum_reduction_matches_formula(self):
        for _ in range(100):
            p = rng.uniform(0.01, 0.99, size=(4, 4))
            t = (rng.random((4, 4)) > 0.5).astype(float)
            val = bce_loss(p, t, reduction="sum")
            oracle = -float(np.sum(t * np.log(p) + (1 - t) * np.log(1 - p)))
            assert abs(val - oracle) < 1e-9

    def test_gradient_points_toward_target(self):
        # Finite-difference sign check: moving prediction toward the target
        # decreases the loss.
        p = np.full(16, 0.4)
        t = np.ones(16)
        h = 1e-6
        up = bce_loss(p + h, t)
        down = bce_loss(p - h, t)
        assert up < down

    def test_tensor_path_matches_numpy(self):
        p = rng.uniform(0.05, 0.95, size=(3, 5))
        t = (rng.random((3, 5)) > 0.5).astype(float)
        assert abs(bce_loss(Tensor(p), Tensor(t)).item() - bce_loss(p, t)) < 1e-12


class TestSegLoss:
    def test_is_sum_of_parts(self):
        p = rng.uniform(0.05, 0.95, size=(6, 6))
        t = (rng.random((6, 6)) > 0.5).astype(float)
        assert abs(seg_loss(p, t) - (dice_loss(p, t) + bce_loss(p, t))) < 1e-12

    def test_perfect_prediction(self):
        t = (rng.random(64) > 0.5).astype(float)
        t[0] = 1.0
        assert seg_loss(t, t) < 1e-5

    def test_at_least_dice(self):
        p = rng.uniform(0.05, 0.95, size=16)
        t = (rng.random(16) > 0.5).astype(float)
        assert seg_loss(p, t) >= dice_loss(p, t)


class TestDetect:
    def test_oracle_detector_is_identity(self):
        m = line_mask([0, 1, 1, 0, 0, 1, 0, 0])
        out = oracle_detector(m)
        assert np.array_equal(out.line_values, m.line_values)
        thresholded = threshold_mask(out, 0.5)
        assert np.array_equal(thresholded.line_values, m.line_values)

    def test_feature_is_normalized_log_magnitude(self):
        k = fft2c(phantom(16))
        feat = kspace_feature(k)
        expected = np.log1p(np.abs(k.data))
        expected /= expected.max()
        assert np.allclose(feat, expected)
        assert feat.min() >= 0.0 and feat.max() <= 1.0

    def test_detect_shapes_and_determinism(self):
        model = build_detector(DetectorConfig(), derived_rng(3))
        k = fft2c(phantom(16))
        m1 = detect(k, model, 0.5)
        m2 = detect(k, model, 0.5)
        score, soft, binary = m1
        assert score.data.shape == (16, 16)
        assert soft.line_values.shape == (16,)
        assert set(np.unique(binary.line_values)) <= {0.0, 1.0}
        assert np.array_equal(m1[2].line_values, m2[2].line_values)
        assert np.array_equal(m1[0].data, m2[0].data)

    def test_grid_mismatch_rejected(self):
        model = build_detector(DetectorConfig(), derived_rng(3))
        k = fft2c(phantom(10))  # 10 not divisible by 4
        with pytest.raises(ValueError, match="divisible"):
            detect(k, model, 0.5)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DetectorConfig(levels=1)
        with pytest.raises(ValueError):
            DetectorConfig(threshold=1.5)
