"""Differentiable operators used by the loop-filter network.

Convolutions use zero "same" padding and stride 1 throughout. Kernels are
laid out (out_channels, in_channels, kh, kw) and computed as correlations,
matching the usual deep-learning convention.
"""
from __future__ import annotations

import numpy as np

from . import exactsum
from .tensor import Tensor, as_tensor, kink_log


class ShapeError(ValueError):
    pass


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return as_tensor(np.asarray(x, dtype=dtype))


def _log_kink(*patterns: np.ndarray) -> None:
    log = kink_log()
    if log is not None:
        log.extend(np.packbits(p) for p in patterns)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._from_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def backward(g):
        return (2.0 * x.data * g,)

    return Tensor._from_op(out, (x,), backward)


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.abs(x.data)
    _log_kink(x.data > 0, x.data < 0)

    def backward(g):
        return (np.sign(x.data) * g,)

    return Tensor._from_op(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    _log_kink(x.data > 0)

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor._from_op(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor._from_op(out, (x,), backward)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)
    _log_kink(x.data > lo, x.data < hi)

    def backward(g):
        return (g * ((x.data > lo) & (x.data < hi)),)

    return Tensor._from_op(out, (x,), backward)


def sum(x: Tensor) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor._from_op(out, (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return Tensor._from_op(out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def _check_kernel(k: int, what: str) -> None:
    if k % 2 != 1:
        raise ShapeError(f"{what} spatial size must be odd, got {k}")


def _conv_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Zero-padded same-size correlation; x (N,C,H,W), w (O,C,kh,kw)."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xh = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    if ph or pw:
        xh = np.pad(xh, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    wt = np.ascontiguousarray(w.transpose(2, 3, 1, 0))  # kh, kw, C, O
    out = np.zeros((n, h, wd, o), dtype=np.result_type(x.dtype, w.dtype))
    for i in range(kh):
        for j in range(kw):
            out += xh[:, i:i + h, j:j + wd, :] @ wt[i, j]
    return out.transpose(0, 3, 1, 2)


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, kh: int, kw: int) -> np.ndarray:
    n, c, h, wd = x.shape
    o = g.shape[1]
    ph, pw = kh // 2, kw // 2
    xh = np.pad(x.transpose(0, 2, 3, 1), ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
    gw = np.empty((o, c, kh, kw), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gw[:, :, i, j] = gm.T @ xh[:, i:i + h, j:j + wd, :].reshape(-1, c)
    return gw


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 zero-padded "same" 2D convolution."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects x (N,C,H,W) and kernel (O,C,kh,kw); got {x.shape} and {kernel.shape}")
    o, c, kh, kw = kernel.shape
    _check_kernel(kh, "kernel")
    _check_kernel(kw, "kernel")
    if x.shape[1] != c:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but kernel expects {c}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {o} output channels")

    out = _conv_same(x.data, kernel.data)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gx = gk = gb = None
        if x.requires_grad:
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx = _conv_same(g, flipped)
        if kernel.requires_grad:
            gk = _conv_weight_grad(x.data, g, kh, kw)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._from_op(out, parents, backward)


def _check_mask(x: Tensor, mask) -> Tensor:
    mask = _wrap(mask, x)
    m = mask.data
    if m.ndim != 4 or m.shape[1] != 1:
        raise ShapeError(f"mask must be single-channel (N,1,H,W), got {m.shape}")
    if m.shape[2:] != x.shape[2:]:
        raise ShapeError(f"mask spatial size {m.shape[2:]} does not match input {x.shape[2:]}")
    if m.shape[0] not in (1, x.shape[0]):
        raise ShapeError(f"mask batch {m.shape[0]} incompatible with input batch {x.shape[0]}")
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("mask values must be exactly 0 or 1")
    return mask


def partial_conv(x: Tensor, mask, kernel: Tensor, bias: Tensor | None = None,
                 renormalize: bool = False) -> Tensor:
    """Convolution of the mask-gated input, ``conv2d(x * mask, kernel, bias)``.

    With ``renormalize`` the masked sum is rescaled by window_size / valid_count
    (and zeroed where the window holds no valid pixel), as in inpainting-style
    partial convolution. Off by default.
    """
    mask = _check_mask(x, mask)
    gated = mul(x, mask)
    if not renormalize:
        return conv2d(gated, kernel, bias)
    _, _, kh, kw = kernel.shape
    ones = np.ones((1, 1, kh, kw), dtype=x.dtype)
    count = _conv_same(mask.data, ones)
    ratio = np.where(count > 0, (kh * kw) / np.maximum(count, 1), 0).astype(x.dtype)
    out = mul(conv2d(gated, kernel, None), ratio)
    if bias is not None:
        out = add(out, mul(reshape(bias, (1, -1, 1, 1)), (count > 0).astype(x.dtype)))
    return out


def _depthwise_same(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    n, c, h, wd = x.shape
    kh, kw = w.shape[-2:]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros(x.shape, dtype=np.result_type(x.dtype, w.dtype))
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + h, j:j + wd] * w[:, i, j][None, :, None, None]
    return out


def depthwise_conv(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-channel spatial convolution; kernels shaped (C,1,kh,kw) or (C,kh,kw)."""
    k = kernels.data
    if k.ndim == 4:
        if k.shape[1] != 1:
            raise ShapeError(f"depthwise kernels must be (C,1,kh,kw), got {k.shape}")
        k = k[:, 0]
    if x.data.ndim != 4 or k.ndim != 3:
        raise ShapeError(f"depthwise_conv expects x (N,C,H,W); got {x.shape}")
    c, kh, kw = k.shape
    if c != x.shape[1]:
        raise ShapeError(f"depthwise_conv: {c} kernels for {x.shape[1]} channels")
    _check_kernel(kh, "depthwise kernel")
    _check_kernel(kw, "depthwise kernel")

    out = _depthwise_same(x.data, k)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        gx = gk = gb = None
        if x.requires_grad:
            gx = _depthwise_same(g, k[:, ::-1, ::-1])
        if kernels.requires_grad:
            n, _, h, wd = x.shape
            xp = np.pad(x.data, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))
            gk = np.empty((c, kh, kw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gk[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i:i + h, j:j + wd])
            gk = gk.reshape(kernels.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return Tensor._from_op(out, parents, backward)


def pointwise_conv(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Per-pixel channel mixing with an (O,C) matrix; a 1x1 conv2d."""
    if kernel.data.ndim == 2:
        kernel = reshape(kernel, kernel.shape + (1, 1))
    if kernel.data.ndim != 4 or kernel.shape[2:] != (1, 1):
        raise ShapeError(f"pointwise kernel must be (O,C) or (O,C,1,1), got {kernel.shape}")
    return conv2d(x, kernel, bias)


# ---------------------------------------------------------------------------
# channel attention pieces
# ---------------------------------------------------------------------------

def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) spatial mean per channel."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    h, w = x.shape[2:]
    if h * w == 0:
        raise ShapeError("global_avg_pool: empty spatial extent")
    flat = x.data.reshape(x.shape[0], x.shape[1], h * w)
    # exactly rounded, so a mean assembled from tiles matches the whole-frame one
    out = exactsum.exact_mean(flat) if np.all(np.isfinite(flat)) else flat.mean(axis=-1)

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype),)

    return Tensor._from_op(out, (x,), backward)


def linear(v: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map of row vectors: v (N,in) or (in,), weights (out,in)."""
    squeeze = v.data.ndim == 1
    vd = v.data[None] if squeeze else v.data
    if weights.data.ndim != 2 or vd.ndim != 2 or vd.shape[1] != weights.shape[1]:
        raise ShapeError(f"linear: cannot apply weights {weights.shape} to input {v.shape}")
    if bias is not None and bias.shape != (weights.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match {weights.shape[0]} outputs")
    out = vd @ weights.data.T
    if bias is not None:
        out = out + bias.data
    if squeeze:
        out = out[0]

    def backward(g):
        g2 = g[None] if squeeze else g
        gv = g2 @ weights.data
        return (gv[0] if squeeze else gv,
                g2.T @ vd if weights.requires_grad else None,
                g2.sum(axis=0) if bias is not None else None)

    parents = (v, weights) if bias is None else (v, weights, bias)
    return Tensor._from_op(out, parents, backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "none": lambda t: t}


def fully_connected(v: Tensor, weights: Tensor, bias: Tensor | None = None,
                    activation: str = "none") -> Tensor:
    try:
        act = _ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}; expected one of {sorted(_ACTIVATIONS)}") from None
    return act(linear(v, weights, bias))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def gather_weighted(x: Tensor, index: np.ndarray, weights: np.ndarray) -> Tensor:
    """out[n, q] = sum_k weights[n,q,k] * x[n, index[n,q,k]] on flattened x (N,P).

    This is bilinear resampling once the four neighbour indices and weights
    are fixed, so gradients flow to x (not to the sample positions).
    """
    if x.data.ndim != 2:
        raise ShapeError(f"gather_weighted expects flattened (N,P) input, got {x.shape}")
    if index.shape != weights.shape or index.ndim != 3 or index.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_weighted: index {index.shape} / weights {weights.shape} vs input {x.shape}")
    n, q, k = index.shape
    picked = np.take_along_axis(x.data, index.reshape(n, q * k), axis=1).reshape(n, q, k)
    w = weights.astype(x.dtype, copy=False)
    out = (picked * w).sum(axis=2)

    def backward(g):
        gx = np.zeros_like(x.data)
        rows = np.broadcast_to(np.arange(n)[:, None, None], index.shape)
        np.add.at(gx, (rows, index), w * g[:, :, None])
        return (gx,)

    return Tensor._from_op(out, (x,), backward)
