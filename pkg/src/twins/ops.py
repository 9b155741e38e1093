"""Forward operators with their backward rules.

Layout conventions: feature maps are ``(B, H, W, C)``; conv weights are
``(kh, kw, C_in // groups, C_out)``; linear weights are ``(in, out)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from .tensor import (
    DimensionError,
    Tensor,
    TensorError,
    as_tensor,
    make_output,
    record_macs,
)

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _same_dtype(*ts: Tensor):
    dtypes = {t.dtype for t in ts}
    if len(dtypes) != 1:
        raise TensorError(f"mixed dtypes {sorted(str(d) for d in dtypes)}")
    return ts[0].dtype


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched ``a @ b``; leading batch dims must broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from None
    m, k = a.shape[-2:]
    n = b.shape[-1]
    record_macs(math.prod(batch) * m * k * n)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_output("matmul", ad @ bd, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: x {x.shape}, w {w.shape}")
    _same_dtype(x, w)
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear bias shape {b.shape}, expected ({w.shape[1]},)")
    record_macs(math.prod(x.shape[:-1]) * w.shape[0] * w.shape[1])
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def bw(g):
        gx = g @ wd.T
        g2 = g.reshape(-1, g.shape[-1])
        gw = xd.reshape(-1, xd.shape[-1]).T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_output("linear", out, inputs, bw)


# ---------------------------------------------------------------- elementwise


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op} requires equal shapes or a scalar: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    _check_elementwise(a, b, "add")
    sa, sb = a.shape, b.shape
    return make_output("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    _check_elementwise(a, b, "mul")
    ad, bd = a.data, b.data
    return make_output(
        "mul", ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def scale(x: Tensor, s: float) -> Tensor:
    x = as_tensor(x)
    s = x.dtype.type(s)
    return make_output("scale", x.data * s, (x,), lambda g: (g * s,))


def add_constant(x: Tensor, c: np.ndarray) -> Tensor:
    """Add a non-differentiable array that broadcasts against ``x``."""
    x = as_tensor(x)
    c = np.asarray(c, dtype=x.dtype)
    if np.broadcast_shapes(x.shape, c.shape) != x.shape:
        raise DimensionError(f"constant {c.shape} does not broadcast to {x.shape}")
    return make_output("add_constant", x.data + c, (x,), lambda g: (g,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = as_tensor(x)
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return make_output("gelu", (xd * cdf).astype(x.dtype, copy=False), (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return make_output("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return make_output(
        "mean", np.asarray(x.data.mean()), (x,), lambda g: (np.broadcast_to(g / n, shape).astype(x.dtype),)
    )


# ---------------------------------------------------------------- normalization


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    return make_output("softmax", y, (x,), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm expects gamma/beta of shape ({c},), got {gamma.shape}, {beta.shape}")
    _same_dtype(x, gamma, beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        red = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True) - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, ggamma, gbeta

    return make_output("layer_norm", out, (x, gamma, beta), bw)


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {src} into {tuple(shape)}") from None
    return make_output("reshape", out, (x,), lambda g: (g.reshape(src),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for rank {x.ndim}")
    inv = tuple(np.argsort([a % x.ndim for a in axes]))
    return make_output("permute", np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def take(x: Tensor, index: int, axis: int) -> Tensor:
    """Select one slice along ``axis`` (the axis is dropped)."""
    x = as_tensor(x)
    axis %= x.ndim
    if not 0 <= index < x.shape[axis]:
        raise DimensionError(f"index {index} out of range for axis {axis} of {x.shape}")
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)

    return make_output("take", np.ascontiguousarray(np.take(x.data, index, axis=axis)), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    _same_dtype(*xs)
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return make_output("concat", out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def pad_zeros(x: Tensor, pad_width: Sequence[tuple[int, int]], value: float = 0.0) -> Tensor:
    """Constant padding, ``pad_width`` per axis as in :func:`numpy.pad`."""
    x = as_tensor(x)
    pad_width = [tuple(p) for p in pad_width]
    if len(pad_width) != x.ndim or any(lo < 0 or hi < 0 for lo, hi in pad_width):
        raise DimensionError(f"bad pad_width {pad_width} for shape {x.shape}")
    out = np.pad(x.data, pad_width, constant_values=value)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, x.shape))
    return make_output("pad", out, (x,), lambda g: (g[sl],))


def crop(x: Tensor, box: Sequence[tuple[int, int]]) -> Tensor:
    """Keep ``x[start:stop]`` per axis; inverse of :func:`pad_zeros`."""
    x = as_tensor(x)
    box = [tuple(b) for b in box]
    if len(box) != x.ndim or any(not 0 <= a <= b <= n for (a, b), n in zip(box, x.shape)):
        raise DimensionError(f"bad crop box {box} for shape {x.shape}")
    sl = tuple(slice(a, b) for a, b in box)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[sl] = g
        return (full,)

    return make_output("crop", np.ascontiguousarray(x.data[sl]), (x,), bw)


# ---------------------------------------------------------------- convolution and pooling


def _out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
    padding_mode: str = "zeros",
) -> Tensor:
    """Cross-correlation on ``(B, H, W, C)`` maps.

    ``padding_mode="circular"`` wraps the border instead of zero filling;
    it exists for translation-equivariance checks.
    """
    x, w = as_tensor(x), as_tensor(w)
    _same_dtype(x, w)
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    bsz, h, wd_, cin = x.shape
    kh, kw, cin_g, cout = w.shape
    if groups < 1 or cin % groups or cout % groups or cin // groups != cin_g:
        raise DimensionError(f"conv2d groups={groups} incompatible with input C={cin} and weight {w.shape}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"conv2d stride={stride} padding={padding} invalid")
    ho, wo = _out_size(h, kh, stride, padding), _out_size(wd_, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise DimensionError(f"kernel {kh}x{kw} does not fit input {h}x{wd_} with padding {padding}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d bias shape {b.shape}, expected ({cout},)")
    record_macs(bsz * ho * wo * cout * kh * kw * cin_g)

    xd, wdat = x.data, w.data
    if padding:
        mode = {"zeros": "constant", "circular": "wrap"}[padding_mode]
        xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding), (0, 0)), mode=mode)
    else:
        xp = xd
    hp, wp = xp.shape[1:3]

    patchify = groups == 1 and kh == kw == stride and hp == ho * kh and wp == wo * kw
    if patchify:
        cols = xp.reshape(bsz, ho, kh, wo, kw, cin).transpose(0, 1, 3, 2, 4, 5).reshape(bsz, ho, wo, kh * kw * cin)
        wmat = wdat.reshape(kh * kw * cin, cout)
        out = cols @ wmat
    else:
        out = np.zeros((bsz, ho, wo, cout), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :]
                out += _group_apply(patch, wdat[i, j], groups)
    if b is not None:
        out = out + b.data

    def bw(g):
        gb = g.sum(axis=(0, 1, 2)) if b is not None else None
        if patchify:
            gw = (cols.reshape(-1, cols.shape[-1]).T @ g.reshape(-1, cout)).reshape(wdat.shape)
            gcols = g @ wmat.T
            gxp = gcols.reshape(bsz, ho, wo, kh, kw, cin).transpose(0, 1, 3, 2, 4, 5).reshape(bsz, hp, wp, cin)
        else:
            gw = np.zeros_like(wdat)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    sl = (
                        slice(None),
                        slice(i, i + stride * (ho - 1) + 1, stride),
                        slice(j, j + stride * (wo - 1) + 1, stride),
                        slice(None),
                    )
                    gw[i, j] = _group_weight_grad(xp[sl], g, groups, cin_g)
                    gxp[sl] += _group_input_grad(g, wdat[i, j], groups)
        if padding:
            if padding_mode == "circular":
                gx = _fold_circular(gxp, padding)
            else:
                gx = gxp[:, padding : padding + h, padding : padding + wd_, :]
        else:
            gx = gxp
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return make_output("conv2d", out, inputs, bw)


def _group_apply(patch: np.ndarray, wk: np.ndarray, groups: int) -> np.ndarray:
    # wk: (cin_g, cout)
    if groups == 1:
        return patch @ wk
    cin_g, cout = wk.shape
    if cin_g == 1 and cout == groups:
        return patch * wk[0]
    b, h, w, _ = patch.shape
    pg = patch.reshape(b, h, w, groups, cin_g)
    wg = wk.reshape(cin_g, groups, cout // groups)
    return np.einsum("bhwgc,cgo->bhwgo", pg, wg).reshape(b, h, w, cout)


def _group_weight_grad(patch: np.ndarray, g: np.ndarray, groups: int, cin_g: int) -> np.ndarray:
    cout = g.shape[-1]
    if groups == 1:
        return patch.reshape(-1, patch.shape[-1]).T @ g.reshape(-1, cout)
    if cin_g == 1 and cout == groups:
        return (patch * g).sum(axis=(0, 1, 2))[None, :]
    pg = patch.reshape(-1, groups, cin_g)
    gg = g.reshape(-1, groups, cout // groups)
    return np.einsum("ngc,ngo->cgo", pg, gg).reshape(cin_g, cout)


def _group_input_grad(g: np.ndarray, wk: np.ndarray, groups: int) -> np.ndarray:
    if groups == 1:
        return g @ wk.T
    cin_g, cout = wk.shape
    if cin_g == 1 and cout == groups:
        return g * wk[0]
    b, h, w, _ = g.shape
    gg = g.reshape(b, h, w, groups, cout // groups)
    wg = wk.reshape(cin_g, groups, cout // groups)
    return np.einsum("bhwgo,cgo->bhwgc", gg, wg).reshape(b, h, w, groups * cin_g)


def _fold_circular(gxp: np.ndarray, p: int) -> np.ndarray:
    hp, wp = gxp.shape[1:3]
    h, w = hp - 2 * p, wp - 2 * p
    g = gxp[:, p : p + h].copy()
    g[:, h - p :] += gxp[:, :p]
    g[:, :p] += gxp[:, p + h :]
    out = g[:, :, p : p + w].copy()
    out[:, :, w - p :] += g[:, :, :p]
    out[:, :, :p] += g[:, :, p + w :]
    return out


def avg_pool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Unpadded average pooling over the spatial axes of ``(B, H, W, C)``."""
    x = as_tensor(x)
    stride = stride or kernel
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects (B, H, W, C), got {x.shape}")
    bsz, h, w, c = x.shape
    ho, wo = _out_size(h, kernel, stride, 0), _out_size(w, kernel, stride, 0)
    if ho < 1 or wo < 1:
        raise DimensionError(f"pool kernel {kernel} larger than input {h}x{w}")
    xd = x.data
    out = np.zeros((bsz, ho, wo, c), dtype=x.dtype)
    inv = x.dtype.type(1.0 / (kernel * kernel))
    for i in range(kernel):
        for j in range(kernel):
            out += xd[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]
    out *= inv

    def bw(g):
        gx = np.zeros(xd.shape, dtype=g.dtype)
        for i in range(kernel):
            for j in range(kernel):
                gx[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += g * inv
        return (gx,)

    return make_output("avg_pool2d", out, (x,), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over every axis between batch and channels: ``(B, ..., C) -> (B, C)``."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"global_avg_pool expects (B, ..., C), got {x.shape}")
    axes = tuple(range(1, x.ndim - 1))
    n = math.prod(x.shape[1:-1])
    shape = x.shape

    def bw(g):
        g = g.reshape((shape[0],) + (1,) * len(axes) + (shape[-1],)) / x.dtype.type(n)
        return (np.broadcast_to(g, shape).copy(),)

    return make_output("global_avg_pool", x.data.mean(axis=axes), (x,), bw)


# ---------------------------------------------------------------- loss


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy expects logits (B, K) and labels (B,), got {logits.shape}, {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise DimensionError("labels out of range")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    bsz = logits.shape[0]
    rows = np.arange(bsz)
    loss = -logp[rows, labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / bsz),)

    return make_output("cross_entropy", np.asarray(loss, dtype=logits.dtype), (logits,), bw)
