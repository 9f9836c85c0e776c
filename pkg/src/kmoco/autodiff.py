"""Minimal reverse-mode automatic differentiation on numpy arrays.

A ``Tensor`` wraps an ndarray plus a gradient slot.  Operations build a
graph of parent links and backward closures; ``Tensor.backward()`` walks the
graph in reverse topological order and accumulates gradients.  Everything
runs in the array's own dtype: float64 for gradient checking, float32 for
training runs.

Only the operations this package needs are implemented: elementwise
arithmetic with broadcasting, matmul (batched or against a 2D weight),
im2col convolution, nearest-neighbour upsampling, smooth activations,
softmax, reductions, shape ops, and a masked k-space MSE whose backward is
the adjoint Fourier transform.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

__all__ = [
    "Tensor",
    "Module",
    "no_grad",
    "is_grad_enabled",
    "add",
    "mul",
    "matmul",
    "conv2d",
    "upsample_nearest2",
    "gelu",
    "sigmoid",
    "exp",
    "log",
    "absolute",
    "power",
    "sqrt",
    "clip",
    "softmax",
    "tsum",
    "tmean",
    "reshape",
    "transpose",
    "concat",
    "masked_kspace_mse",
]

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An ndarray with a same-shape gradient slot and parent links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- graph machinery ----------------------------------------------------

    def _accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        if self.grad is None:
            if owned and g.dtype == self.data.dtype:
                # The backward closure allocated g freshly and hands over
                # ownership, so aliasing is safe and saves a copy.
                self.grad = g
            else:
                self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-accumulate gradients from a scalar result."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_ensure(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_ensure(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _ensure(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _ensure(a, getattr(b, "dtype", np.float64))
    b = _ensure(b, a.dtype)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.shape)
            b._accumulate(gb, owned=gb is not g)

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _ensure(a, getattr(b, "dtype", np.float64))
    b = _ensure(b, a.dtype)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), owned=True)

    return _make(out_data, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out_data = a.data**p

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1.0), owned=True)

    return _make(out_data, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data, owned=True)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data, owned=True)

    return _make(out_data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.sign(a.data), owned=True)

    return _make(out_data, (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            inside = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)
            a._accumulate(g * inside, owned=True)

    return _make(out_data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit; smooth, so finite differences agree."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(x.dtype.type(2.0))))
    out_data = x * cdf

    def backward(g):
        if a.requires_grad:
            pdf = np.exp(-0.5 * x * x) / np.sqrt(x.dtype.type(2.0 * np.pi))
            a._accumulate(g * (cdf + x * pdf), owned=True)

    return _make(out_data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data), owned=True)

    return _make(out_data, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            a._accumulate(out_data * (g - dot), owned=True)

    return _make(out_data, (a,), backward)


# -- reductions and shape ops -------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy(), owned=True)
            return
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        a._accumulate(np.broadcast_to(gg, a.shape).copy(), owned=True)

    return _make(out_data, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return _make(out_data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return _make(out_data, (a,), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(int(lo), int(hi))
                t._accumulate(g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int, eps: float = 1e-5) -> Tensor:
    """Normalize over one axis with a learned affine, as a fused primitive."""
    mu = x.data.mean(axis=axis, keepdims=True)
    d = x.data - mu
    var = (d * d).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = d * inv
    out_data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate(_unbroadcast(g * xhat, gamma.data.shape), owned=True)
        if beta.requires_grad:
            beta._accumulate(_unbroadcast(g, beta.data.shape), owned=True)
        if x.requires_grad:
            gxhat = g * gamma.data
            m1 = gxhat.mean(axis=axis, keepdims=True)
            m2 = (gxhat * xhat).mean(axis=axis, keepdims=True)
            x._accumulate(inv * (gxhat - m1 - xhat * m2), owned=True)

    return _make(out_data, (x, gamma, beta), backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: batched (same leading dims) or against a 2D weight."""
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.shape), owned=True)
        if b.requires_grad:
            if b.data.ndim == 2:
                k = a.shape[-1]
                m = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                gb = _unbroadcast(gb, b.shape)
            b._accumulate(gb, owned=True)

    return _make(out_data, (a, b), backward)


# -- convolution and resampling -----------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 1) -> Tensor:
    """2D convolution (cross-correlation) over NCHW input with OIHW weights."""
    n, c, h, wdt = x.shape
    co, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight expects {ci}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wdt + 2 * padding - kw) // stride + 1

    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = w.data.reshape(co, c * kh * kw)
    out2d = cols @ wmat.T
    if b is not None:
        out2d = out2d + b.data[None, :]
    out_data = out2d.reshape(n, ho, wo, co).transpose(0, 3, 1, 2)
    # Keep the im2col matrix alive for the weight gradient; the activation
    # itself is already referenced by the graph, so this only adds one copy.
    cached_cols = cols if (_GRAD_ENABLED and w.requires_grad) else None

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, co)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))
        if w.requires_grad:
            w._accumulate((g2.T @ cached_cols).reshape(co, c, kh, kw))
        if x.requires_grad:
            # Scatter-add in channels-last layout with kernel axes leading the
            # channel axis, so every slice below is unit-stride; one transpose
            # at the end goes back to NCHW.
            wmat_kc = np.ascontiguousarray(w.data.transpose(0, 2, 3, 1)).reshape(co, kh * kw * c)
            gcols = (g2 @ wmat_kc).reshape(n, ho, wo, kh, kw, c)
            gxp_cl = np.zeros((n, hp, wp, c), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp_cl[:, i : i + stride * (ho - 1) + 1 : stride,
                           j : j + stride * (wo - 1) + 1 : stride, :] += gcols[:, :, :, i, j, :]
            gxp = np.ascontiguousarray(gxp_cl.transpose(0, 3, 1, 2))
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(gxp, owned=True)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Double spatial resolution by pixel repetition (NCHW)."""
    out_data = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)), owned=True)

    return _make(out_data, (x,), backward)


def roll2d(x: Tensor, shift_h: int, shift_w: int) -> Tensor:
    """Cyclic shift of the two trailing spatial axes."""
    out_data = np.roll(x.data, (shift_h, shift_w), axis=(-2, -1))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.roll(g, (-shift_h, -shift_w), axis=(-2, -1)), owned=True)

    return _make(out_data, (x,), backward)


# -- spectral loss ------------------------------------------------------------


def _fft2c_array(x: np.ndarray) -> np.ndarray:
    s = np.fft.ifftshift(x, axes=(-2, -1))
    s = np.fft.fft2(s, norm="ortho")
    return np.fft.fftshift(s, axes=(-2, -1))


def _ifft2c_array(k: np.ndarray) -> np.ndarray:
    s = np.fft.ifftshift(k, axes=(-2, -1))
    s = np.fft.ifft2(s, norm="ortho")
    return np.fft.fftshift(s, axes=(-2, -1))


def masked_kspace_mse(x: Tensor, k_ref: np.ndarray, mask: np.ndarray, reduction: str = "mean") -> Tensor:
    """Squared error between masked centered spectra of ``x`` and a reference.

    ``mask`` broadcasts against the spectrum of ``x`` (last two axes spatial).
    With ``reduction="mean"`` the sum is divided by the number of masked
    samples (sum of mask weights, at least 1); ``"sum"`` leaves it raw.
    The backward pass is the adjoint transform: since the centered
    orthonormal FFT is unitary, the gradient is the real part of the inverse
    transform of the masked spectral residue.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    fx = _fft2c_array(x.data)
    diff = (fx - k_ref) * mask
    total = float(np.sum(diff.real**2 + diff.imag**2))
    if reduction == "mean":
        denom = max(float(np.sum(np.broadcast_to(mask, fx.shape))), 1.0)
    else:
        denom = 1.0
    out_data = np.asarray(total / denom, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            gx = (2.0 / denom) * _ifft2c_array(diff * mask).real
            x._accumulate((float(g) * gx).astype(x.dtype), owned=True)

    return _make(out_data, (x,), backward)


# -- module container ---------------------------------------------------------


class Module:
    """Base class with recursive, deterministic parameter discovery."""

    def named_parameters(self):
        """Yield (dotted_name, Tensor) in attribute insertion order."""
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                for sub, t in value.named_parameters():
                    yield f"{name}.{sub}", t
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for sub, t in item.named_parameters():
                            yield f"{name}.{i}.{sub}", t
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.parameters())
