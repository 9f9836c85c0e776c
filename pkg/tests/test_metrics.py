"""PSNR/SSIM/NMSE against closed forms and behavioural properties."""

import math

import numpy as np
import pytest

from kmoco.metrics import nmse, psnr, ssim
from kmoco.phantom import phantom

rng = np.random.default_rng(11)


class TestPSNR:
    def test_closed_form(self):
        # MSE 1e-2 with peak 1 is exactly 20 dB.
        gt = np.zeros((10, 10))
        gt[0, 0] = 1.0  # pins the data range to 1
        pred = gt + 0.1
        assert abs(psnr(pred, gt) - 20.0) < 1e-9

    def test_identical_images_are_infinite(self):
        img = rng.random((12, 12))
        assert psnr(img, img) == math.inf

    def test_monotone_in_noise(self):
        gt = phantom(32).data
        values = []
        for sigma in (0.01, 0.05, 0.1):
            trial = [
                psnr(gt + np.random.default_rng(100 + t).normal(0, sigma, gt.shape), gt)
                for t in range(20)
            ]
            values.append(np.mean(trial))
        assert values[0] > values[1] > values[2]

    def test_peak_default_is_gt_range(self):
        gt = rng.random((8, 8)) * 3.0
        pred = gt + 0.5
        expected = 10 * math.log10((gt.max() - gt.min()) ** 2 / 0.25)
        assert abs(psnr(pred, gt) - expected) < 1e-9

    def test_rejects_bad_peak(self):
        with pytest.raises(ValueError):
            psnr(np.ones((8, 8)), np.ones((8, 8)), peak=0.0)


class TestSSIM:
    def test_self_similarity_is_one(self):
        img = phantom(32).data
        assert abs(ssim(img, img) - 1.0) < 1e-9

    def test_anticorrelated_checkerboard_is_negative(self):
        yy, xx = np.mgrid[0:16, 0:16]
        board = ((yy + xx) % 2).astype(float)
        assert ssim(1.0 - board, board) < 0.0

    def test_constant_images_closed_form(self):
        c, d = 0.3, 0.7
        a = np.full((16, 16), c)
        b = np.full((16, 16), d)
        # Zero-variance pair: only the luminance term survives, with the
        # dynamic-range constant defaulting to 1.
        c1 = 0.01**2
        expected = (2 * c * d + c1) / (c * c + d * d + c1)
        assert abs(ssim(a, b) - expected) < 1e-9

    def test_bounded(self):
        for _ in range(10):
            a = rng.random((16, 16))
            b = rng.random((16, 16))
            val = ssim(a, b)
            assert -1.0 - 1e-9 <= val <= 1.0 + 1e-9

    def test_size_guard(self):
        with pytest.raises(ValueError):
            ssim(np.ones((8, 8)), np.ones((8, 8)))


class TestNMSE:
    def test_zero_for_identical(self):
        img = phantom(16).data
        assert nmse(img, img) == 0.0

    def test_double_is_hundred_percent(self):
        gt = rng.random((8, 8)) + 0.1
        assert abs(nmse(2 * gt, gt) - 100.0) < 1e-9

    def test_zero_prediction_is_hundred_percent(self):
        gt = rng.random((8, 8)) + 0.1
        assert abs(nmse(np.zeros_like(gt), gt) - 100.0) < 1e-9

    def test_scale_covariance(self):
        a = rng.random((8, 8))
        b = rng.random((8, 8)) + 0.2
        for scale in (0.5, 3.0, -2.0):
            assert abs(nmse(scale * a, scale * b) - nmse(a, b)) < 1e-9

    def test_zero_energy_rejected(self):
        with pytest.raises(ValueError):
            nmse(np.ones((8, 8)), np.zeros((8, 8)))
