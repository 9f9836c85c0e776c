"""Finite-difference checks for every engine operation and layer type."""

import numpy as np
import pytest

from kmoco import autodiff as ad
from kmoco.autodiff import Module, Tensor
from kmoco.layers import LayerNorm, ResidualBlock, SwinBlock, UNet, WindowAttention, window_partition

rng = np.random.default_rng(1234)
H = 1e-5
TOL = 1e-4


def fd_check(build_loss, tensors, n_probe=10):
    """Central finite differences against reverse-mode gradients (64-bit)."""
    for t in tensors:
        t.zero_grad()
    build_loss().backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "parameter received no gradient"
        g = t.grad.copy()
        flat = t.data.reshape(-1)
        idx = rng.choice(flat.size, size=min(n_probe, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + H
            lp = build_loss().item()
            flat[i] = orig - H
            lm = build_loss().item()
            flat[i] = orig
            fd = (lp - lm) / (2 * H)
            an = g.reshape(-1)[i]
            # Floor keeps finite-difference noise on true-zero gradients
            # (e.g. the key bias under softmax shift invariance) from
            # registering as relative error.
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-5))
    return worst


def leaf(shape, scale=1.0, seed=None):
    r = np.random.default_rng(seed) if seed is not None else rng
    return Tensor(r.normal(size=shape) * scale, requires_grad=True)


class TestElementwise:
    def test_add_mul_broadcast(self):
        a = leaf((3, 4, 5))
        b = leaf((4, 1))
        r = rng.normal(size=(3, 4, 5))
        assert fd_check(lambda: ((a + b) * r).sum(), [a, b]) < TOL
        assert fd_check(lambda: ((a * b) * r).sum(), [a, b]) < TOL

    def test_power_sqrt_exp_log_abs(self):
        a = leaf((4, 4))
        pos = Tensor(np.abs(rng.normal(size=(4, 4))) + 0.5, requires_grad=True)
        r = rng.normal(size=(4, 4))
        assert fd_check(lambda: ((a**3.0) * r).sum(), [a]) < TOL
        assert fd_check(lambda: (ad.sqrt(pos) * r).sum(), [pos]) < TOL
        assert fd_check(lambda: (ad.exp(a) * r).sum(), [a]) < TOL
        assert fd_check(lambda: (ad.log(pos) * r).sum(), [pos]) < TOL
        assert fd_check(lambda: (ad.absolute(a) * r).sum(), [a]) < TOL

    def test_activations(self):
        a = leaf((3, 7))
        r = rng.normal(size=(3, 7))
        assert fd_check(lambda: (ad.gelu(a) * r).sum(), [a]) < TOL
        assert fd_check(lambda: (ad.sigmoid(a) * r).sum(), [a]) < TOL

    def test_clip_interior(self):
        a = Tensor(rng.uniform(0.2, 0.8, size=(5, 5)), requires_grad=True)
        r = rng.normal(size=(5, 5))
        assert fd_check(lambda: (ad.clip(a, 0.1, 0.9) * r).sum(), [a]) < TOL

    def test_softmax_rows_sum_to_one(self):
        a = leaf((2, 3, 6))
        y = ad.softmax(a, axis=-1)
        assert np.abs(y.data.sum(axis=-1) - 1.0).max() < 1e-12
        r = rng.normal(size=(2, 3, 6))
        assert fd_check(lambda: (ad.softmax(a, -1) * r).sum(), [a]) < TOL


class TestShapeOps:
    def test_reductions(self):
        a = leaf((3, 4, 5))
        r1 = rng.normal(size=(3, 1, 5))
        r2 = rng.normal(size=(3, 4))
        assert fd_check(lambda: a.sum(), [a]) < TOL
        assert fd_check(lambda: (a.mean(axis=1, keepdims=True) * r1).sum(), [a]) < TOL
        assert fd_check(lambda: (a.sum(axis=2) * r2).sum(), [a]) < TOL

    def test_reshape_transpose_concat_roll(self):
        a = leaf((2, 3, 4))
        b = leaf((2, 3, 4))
        r = rng.normal(size=(2, 8, 3))
        assert fd_check(lambda: (ad.concat([a, b], axis=2).transpose(0, 2, 1) * r).sum(), [a, b]) < TOL
        r2 = rng.normal(size=(6, 4))
        assert fd_check(lambda: (a.reshape(6, 4) * r2).sum(), [a]) < TOL
        r3 = rng.normal(size=(2, 3, 4))
        assert fd_check(lambda: (ad.roll2d(a, 1, -1) * r3).sum(), [a]) < TOL

    def test_upsample(self):
        a = leaf((2, 3, 4, 4))
        r = rng.normal(size=(2, 3, 8, 8))
        assert fd_check(lambda: (ad.upsample_nearest2(a) * r).sum(), [a]) < TOL


class TestMatmulConv:
    def test_matmul_weight(self):
        a = leaf((3, 5, 6))
        w = leaf((6, 4))
        r = rng.normal(size=(3, 5, 4))
        assert fd_check(lambda: (ad.matmul(a, w) * r).sum(), [a, w]) < TOL

    def test_matmul_batched(self):
        a = leaf((2, 3, 4, 5))
        b = leaf((2, 3, 5, 6))
        r = rng.normal(size=(2, 3, 4, 6))
        assert fd_check(lambda: (ad.matmul(a, b) * r).sum(), [a, b]) < TOL

    @pytest.mark.parametrize("stride,k,pad", [(1, 3, 1), (2, 3, 1), (1, 1, 0)])
    def test_conv2d(self, stride, k, pad):
        x = leaf((2, 3, 8, 8))
        w = leaf((4, 3, k, k), scale=0.4)
        b = leaf((4,), scale=0.1)
        out_hw = (8 + 2 * pad - k) // stride + 1
        r = rng.normal(size=(2, 4, out_hw, out_hw))
        assert fd_check(lambda: (ad.conv2d(x, w, b, stride=stride, padding=pad) * r).sum(), [x, w, b]) < TOL

    def test_conv_channel_mismatch_rejected(self):
        x = leaf((1, 3, 8, 8))
        w = leaf((4, 2, 3, 3))
        with pytest.raises(ValueError, match="channel"):
            ad.conv2d(x, w, None)


class TestSpectralLoss:
    def test_masked_kspace_mse_gradient(self):
        x = leaf((8, 8))
        k_ref = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(rng.normal(size=(8, 8))), norm="ortho"))
        mask = (rng.random((8, 8)) > 0.4).astype(float)
        assert fd_check(lambda: ad.masked_kspace_mse(x, k_ref, mask), [x]) < TOL
        assert fd_check(lambda: ad.masked_kspace_mse(x, k_ref, mask, reduction="sum"), [x]) < TOL

    def test_batched_gradient(self):
        x = leaf((2, 1, 8, 8))
        k_ref = np.fft.fftshift(
            np.fft.fft2(np.fft.ifftshift(rng.normal(size=(2, 1, 8, 8)), axes=(-2, -1)), norm="ortho", axes=(-2, -1)),
            axes=(-2, -1),
        )
        mask = (rng.random((2, 1, 8, 8)) > 0.5).astype(float)
        assert fd_check(lambda: ad.masked_kspace_mse(x, k_ref, mask), [x]) < TOL

    def test_zero_mask_gives_zero(self):
        x = leaf((8, 8))
        k_ref = np.zeros((8, 8), dtype=complex)
        assert ad.masked_kspace_mse(x, k_ref, np.zeros((8, 8))).item() == 0.0


class TestLayers:
    def test_layer_norm_channel(self):
        ln = LayerNorm(3, axis=1)
        x = leaf((2, 3, 4, 4))
        r = rng.normal(size=(2, 3, 4, 4))
        assert fd_check(lambda: (ln(x) * r).sum(), [x, ln.gamma, ln.beta]) < TOL

    def test_residual_block(self):
        blk = ResidualBlock(np.random.default_rng(7), 4)
        x = leaf((1, 4, 6, 6))
        r = rng.normal(size=(1, 4, 6, 6))
        assert fd_check(lambda: (blk(x) * r).sum(), [x] + blk.parameters(), n_probe=4) < TOL

    @pytest.mark.parametrize("shifted", [False, True])
    def test_swin_block(self, shifted):
        blk = SwinBlock(np.random.default_rng(8), 4, window=2, heads=2, shifted=shifted)
        x = leaf((1, 4, 4, 4))
        r = rng.normal(size=(1, 4, 4, 4))
        assert fd_check(lambda: (blk(x) * r).sum(), [x] + blk.parameters(), n_probe=4) < TOL

    def test_attention_softmax_rows(self):
        attn = WindowAttention(np.random.default_rng(9), 8, heads=2)
        t = Tensor(rng.normal(size=(3, 4, 8)))
        attn(t)
        rows = attn._last_attn.sum(axis=-1)
        assert np.abs(rows - 1.0).max() < 1e-6

    def test_key_bias_gradient_is_exactly_zero(self):
        # Softmax is invariant to a constant shift of the key projections.
        attn = WindowAttention(np.random.default_rng(21), 8, heads=2)
        t = Tensor(rng.normal(size=(2, 4, 8)))
        out = attn(t)
        (out * rng.normal(size=out.shape)).sum().backward()
        assert np.abs(attn.k.bias.grad).max() < 1e-12

    def test_window_attention_permutation_equivariance(self):
        # Without positional bias, permuting tokens inside a window then
        # un-permuting the output is the identity.
        attn = WindowAttention(np.random.default_rng(10), 8, heads=2)
        t = Tensor(rng.normal(size=(2, 6, 8)))
        base = attn(t).data
        perm = np.random.default_rng(0).permutation(6)
        t_p = Tensor(t.data[:, perm, :])
        out_p = attn(t_p).data
        restored = np.empty_like(out_p)
        restored[:, perm, :] = out_p
        assert np.abs(restored - base).max() < 1e-10

    def test_full_unet_gradient(self):
        net = UNet(np.random.default_rng(11), levels=2, base=4, attn_levels=(1,),
                   window=2, heads=2, residual_output=True, zero_head=True)
        x = Tensor(rng.normal(size=(1, 1, 8, 8)))
        r = rng.normal(size=(1, 1, 8, 8))
        assert fd_check(lambda: (net(x) * r).sum(), net.parameters(), n_probe=2) < TOL

    def test_unet_shape_validation(self):
        net = UNet(np.random.default_rng(12), levels=3, base=4)
        with pytest.raises(ValueError, match="divisible"):
            net(Tensor(np.zeros((1, 1, 10, 10))))


class TestMachinery:
    def test_no_grad_blocks_graph(self):
        a = leaf((3, 3))
        with ad.no_grad():
            out = (a * 2.0).sum()
        assert out._backward is None and not out.requires_grad

    def test_backward_requires_scalar(self):
        a = leaf((3, 3))
        with pytest.raises(ValueError):
            (a * 2.0)._backward  # noqa: B018  (attribute access fine)
            (a * 2.0).backward()

    def test_gradient_accumulates_across_uses(self):
        a = leaf((4,))
        loss = (a * 1.0).sum() + (a * 2.0).sum()
        loss.backward()
        assert np.allclose(a.grad, 3.0)

    def test_module_parameter_discovery_is_ordered(self):
        net = UNet(np.random.default_rng(13), levels=2, base=4)
        names1 = [n for n, _ in net.named_parameters()]
        names2 = [n for n, _ in net.named_parameters()]
        assert names1 == names2
        assert len(names1) == len(set(names1))
        assert any("head" in n for n in names1)

    def test_values_stay_finite(self):
        net = UNet(np.random.default_rng(14), levels=2, base=4, residual_output=True, zero_head=True)
        x = Tensor(rng.normal(size=(2, 1, 8, 8)))
        out = net(x)
        assert np.all(np.isfinite(out.data))
