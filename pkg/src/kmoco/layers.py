"""Network building blocks: convolutions, norms, window attention, U-net.

The same encoder/decoder backbone serves both networks in the pipeline.
The corruption detector uses it plain (no attention, sigmoid head); the
corrector adds windowed self-attention blocks at its deepest levels, a
zero-initialized head, and a global residual connection so the untrained
model is the identity map.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Module, Tensor

__all__ = [
    "Conv2d",
    "Linear",
    "LayerNorm",
    "ResidualBlock",
    "WindowAttention",
    "SwinBlock",
    "UNet",
]


def _he_conv(rng: np.random.Generator, co: int, ci: int, k: int, dtype) -> Tensor:
    std = np.sqrt(2.0 / (ci * k * k))
    return Tensor(rng.normal(0.0, std, (co, ci, k, k)).astype(dtype), requires_grad=True)


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Tensor:
    std = np.sqrt(1.0 / fan_in)
    return Tensor(rng.normal(0.0, std, (fan_in, fan_out)).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, padding=1, dtype=np.float64, zero_init=False):
        self.stride = stride
        self.padding = padding
        if zero_init:
            self.weight = Tensor(np.zeros((c_out, c_in, k, k), dtype=dtype), requires_grad=True)
        else:
            self.weight = _he_conv(rng, c_out, c_in, k, dtype)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, rng, d_in, d_out, dtype=np.float64):
        self.weight = _xavier(rng, d_in, d_out, dtype)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    """Normalize over one axis (channels), learned affine afterwards."""

    def __init__(self, c: int, axis: int, dtype=np.float64, eps: float = 1e-5):
        self.axis = axis
        self.eps = eps
        if axis == 1:
            shape = (1, c, 1, 1)
        elif axis == -1:
            shape = (c,)
        else:
            raise ValueError("LayerNorm supports axis 1 (NCHW) or -1 (tokens)")
        self.gamma = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, axis=self.axis, eps=self.eps)


class ResidualBlock(Module):
    """Pre-norm double convolution with an additive skip."""

    def __init__(self, rng, c: int, dtype=np.float64):
        self.norm = LayerNorm(c, axis=1, dtype=dtype)
        self.conv1 = Conv2d(rng, c, c, dtype=dtype)
        self.conv2 = Conv2d(rng, c, c, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm(x)
        h = ad.gelu(self.conv1(h))
        h = self.conv2(h)
        return x + h


def window_partition(x: Tensor, ws: int) -> tuple[Tensor, tuple[int, int, int]]:
    """NCHW -> (n_windows_total, ws*ws, C) token windows."""
    n, c, h, w = x.shape
    nh, nw = h // ws, w // ws
    t = x.reshape(n, c, nh, ws, nw, ws)
    t = t.transpose(0, 2, 4, 3, 5, 1)  # (n, nh, nw, ws, ws, c)
    return t.reshape(n * nh * nw, ws * ws, c), (n, nh, nw)


def window_merge(t: Tensor, ws: int, c: int, dims: tuple[int, int, int]) -> Tensor:
    """Inverse of :func:`window_partition`."""
    n, nh, nw = dims
    x = t.reshape(n, nh, nw, ws, ws, c)
    x = x.transpose(0, 5, 1, 3, 2, 4)  # (n, c, nh, ws, nw, ws)
    return x.reshape(n, c, nh * ws, nw * ws)


class WindowAttention(Module):
    """Multi-head self-attention over window tokens, no positional bias."""

    def __init__(self, rng, c: int, heads: int, dtype=np.float64):
        if c % heads != 0:
            raise ValueError(f"channels {c} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = c // heads
        self.q = Linear(rng, c, c, dtype=dtype)
        self.k = Linear(rng, c, c, dtype=dtype)
        self.v = Linear(rng, c, c, dtype=dtype)
        self.proj = Linear(rng, c, c, dtype=dtype)
        self._last_attn: np.ndarray | None = None

    def __call__(self, t: Tensor) -> Tensor:
        b, l, c = t.shape
        h, d = self.heads, self.head_dim

        def split_heads(u: Tensor) -> Tensor:
            return u.reshape(b, l, h, d).transpose(0, 2, 1, 3)

        q = split_heads(self.q(t))
        k = split_heads(self.k(t))
        v = split_heads(self.v(t))
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
        attn = ad.softmax(scores, axis=-1)
        self._last_attn = attn.data
        out = ad.matmul(attn, v)
        out = out.transpose(0, 2, 1, 3).reshape(b, l, c)
        return self.proj(out)


class SwinBlock(Module):
    """Pre-norm window attention plus MLP, operating on an NCHW feature map.

    ``shifted=True`` cyclically shifts the grid by half a window before
    partitioning (and back after), letting information cross window borders.
    """

    def __init__(self, rng, c: int, window: int, heads: int, mlp_ratio: float = 2.0,
                 shifted: bool = False, dtype=np.float64):
        self.window = window
        self.shifted = shifted
        self.norm1 = LayerNorm(c, axis=-1, dtype=dtype)
        self.attn = WindowAttention(rng, c, heads, dtype=dtype)
        self.norm2 = LayerNorm(c, axis=-1, dtype=dtype)
        hidden = int(round(c * mlp_ratio))
        self.fc1 = Linear(rng, c, hidden, dtype=dtype)
        self.fc2 = Linear(rng, hidden, c, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        ws = self.window
        if h % ws or w % ws:
            raise ValueError(f"feature map {h}x{w} not divisible by window {ws}")
        shift = ws // 2 if self.shifted else 0
        if shift:
            x = ad.roll2d(x, -shift, -shift)
        t, dims = window_partition(x, ws)
        t = t + self.attn(self.norm1(t))
        t = t + self.fc2(ad.gelu(self.fc1(self.norm2(t))))
        x = window_merge(t, ws, c, dims)
        if shift:
            x = ad.roll2d(x, shift, shift)
        return x


class UNet(Module):
    """Encoder/decoder with residual blocks, optional window attention.

    Channel width doubles per level.  Attention blocks attach to the levels
    listed in ``attn_levels`` on both the encoder and decoder paths.  The
    head is a 3x3 convolution; with ``residual_output`` the model predicts a
    correction added to its input, and ``zero_head`` makes that correction
    zero at initialization.
    """

    def __init__(self, rng, in_ch=1, out_ch=1, levels=3, base=16, attn_levels=(),
                 window=4, heads=2, mlp_ratio=2.0, shifted=False,
                 residual_output=False, sigmoid_output=False, zero_head=False,
                 dtype=np.float64):
        if levels < 2:
            raise ValueError("UNet needs at least 2 levels")
        self.levels = levels
        self.window = window
        self.attn_levels = tuple(sorted(attn_levels))
        self.residual_output = residual_output
        self.sigmoid_output = sigmoid_output
        chans = [base * (2**l) for l in range(levels)]
        self.chans = chans

        self.stem = Conv2d(rng, in_ch, chans[0], dtype=dtype)
        self.enc_blocks = [ResidualBlock(rng, chans[l], dtype=dtype) for l in range(levels)]
        self.enc_attn = [
            SwinBlock(rng, chans[l], window, heads, mlp_ratio, shifted, dtype=dtype)
            if l in self.attn_levels else None
            for l in range(levels)
        ]
        self.downs = [
            Conv2d(rng, chans[l], chans[l + 1], stride=2, dtype=dtype) for l in range(levels - 1)
        ]
        # Channel bookkeeping around up/merge is 1x1; spatial mixing happens
        # in the 3x3 residual blocks that follow.
        self.ups = [
            Conv2d(rng, chans[l + 1], chans[l], k=1, padding=0, dtype=dtype)
            for l in range(levels - 1)
        ]
        self.merges = [
            Conv2d(rng, 2 * chans[l], chans[l], k=1, padding=0, dtype=dtype)
            for l in range(levels - 1)
        ]
        self.dec_blocks = [ResidualBlock(rng, chans[l], dtype=dtype) for l in range(levels - 1)]
        self.dec_attn = [
            SwinBlock(rng, chans[l], window, heads, mlp_ratio, shifted, dtype=dtype)
            if l in self.attn_levels else None
            for l in range(levels - 1)
        ]
        self.head = Conv2d(rng, chans[0], out_ch, dtype=dtype, zero_init=zero_head)

    def check_input(self, h: int, w: int) -> None:
        down = 2 ** (self.levels - 1)
        if h % down or w % down:
            raise ValueError(f"input {h}x{w} not divisible by 2^(levels-1)={down}")
        for l in self.attn_levels:
            if (h // 2**l) % self.window or (w // 2**l) % self.window:
                raise ValueError(
                    f"level {l} feature map {h // 2**l}x{w // 2**l} not divisible "
                    f"by window {self.window}"
                )

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        self.check_input(h, w)

        feats = self.stem(x)
        skips = []
        for l in range(self.levels):
            feats = self.enc_blocks[l](feats)
            if self.enc_attn[l] is not None:
                feats = self.enc_attn[l](feats)
            if l < self.levels - 1:
                skips.append(feats)
                feats = self.downs[l](feats)

        for l in range(self.levels - 2, -1, -1):
            feats = self.ups[l](ad.upsample_nearest2(feats))
            feats = self.merges[l](ad.concat([skips[l], feats], axis=1))
            feats = self.dec_blocks[l](feats)
            if self.dec_attn[l] is not None:
                feats = self.dec_attn[l](feats)

        out = self.head(feats)
        if self.residual_output:
            out = x + out
        if self.sigmoid_output:
            out = ad.sigmoid(out)
        return out
