"""Multi-head attention variants over ``(B, H, W, C)`` feature maps.

* :func:`mhsa` - full attention over a token sequence.
* :func:`lsa` - attention restricted to non-overlapping ``k1 x k2`` windows.
* :func:`gsa` / :func:`sra` - all tokens query a strided-conv summary of the map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .module import Init, LayerNormParams, Module
from .tensor import DimensionError, Tensor, mac_scope

ATTN_SCOPE = "attention"


def mask_value(dtype) -> float:
    """Additive logit used for masked keys; finite so softmax stays finite."""
    return -1e30 if np.dtype(dtype) == np.float64 else -1e9


class AttentionParams(Module):
    """Projection weights for one attention layer.

    ``fused_qkv=True`` stores a single ``(C, 3C)`` projection (windowed
    attention); otherwise queries and the key/value pair are projected
    separately so keys and values may come from a reduced map. ``ratio > 1``
    adds the sub-sampling conv (kernel = stride = ratio) and its layer norm.
    """

    def __init__(self, init: Init, dim: int, heads: int, fused_qkv: bool = True, ratio: int = 1):
        if heads < 1 or dim % heads:
            raise DimensionError(f"dim {dim} is not divisible by heads {heads}")
        if ratio < 1:
            raise ValueError(f"reduction ratio must be >= 1, got {ratio}")
        if fused_qkv and ratio > 1:
            raise ValueError("fused qkv projection cannot use a reduced key/value map")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = self.head_dim**-0.5
        self.fused_qkv = fused_qkv
        self.ratio = ratio
        if fused_qkv:
            self.qkv_weight = init.trunc_normal(dim, 3 * dim)
            self.qkv_bias = init.zeros(3 * dim)
        else:
            self.q_weight = init.trunc_normal(dim, dim)
            self.q_bias = init.zeros(dim)
            self.kv_weight = init.trunc_normal(dim, 2 * dim)
            self.kv_bias = init.zeros(2 * dim)
        if ratio > 1:
            self.sr_weight = init.trunc_normal(ratio, ratio, dim, dim)
            self.sr_bias = init.zeros(dim)
            self.sr_norm = LayerNormParams(init, dim)
        self.proj_weight = init.trunc_normal(dim, dim)
        self.proj_bias = init.zeros(dim)


@dataclass(frozen=True)
class WindowGrid:
    k1: int
    k2: int
    m: int
    n: int
    pad_h: int
    pad_w: int

    @property
    def height(self) -> int:
        return self.m * self.k1 - self.pad_h

    @property
    def width(self) -> int:
        return self.n * self.k2 - self.pad_w

    def key_mask(self) -> np.ndarray:
        """Boolean ``(m*n, k1*k2)``; True where the window slot holds a real token."""
        rows = np.arange(self.m * self.k1) < self.height
        cols = np.arange(self.n * self.k2) < self.width
        valid = rows[:, None] & cols[None, :]
        valid = valid.reshape(self.m, self.k1, self.n, self.k2).transpose(0, 2, 1, 3)
        return valid.reshape(self.m * self.n, self.k1 * self.k2)


def _check_map(x: Tensor, p: AttentionParams) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise DimensionError(f"expected a (B, H, W, C) feature map, got {x.shape}")
    if x.shape[-1] != p.dim:
        raise DimensionError(f"feature map has C={x.shape[-1]}, attention params expect {p.dim}")
    return x.shape


def _split_last(t: Tensor, parts: int) -> list[Tensor]:
    b, n, c = t.shape
    t = ops.reshape(t, (b, n, parts, c // parts))
    return [ops.take(t, i, axis=2) for i in range(parts)]


def _project(x: Tensor, p: AttentionParams, kv_source: Tensor | None = None):
    if p.fused_qkv:
        if kv_source is not None:
            raise ValueError("fused projection needs keys and queries from the same tokens")
        return _split_last(ops.linear(x, p.qkv_weight, p.qkv_bias), 3)
    q = ops.linear(x, p.q_weight, p.q_bias)
    k, v = _split_last(ops.linear(x if kv_source is None else kv_source, p.kv_weight, p.kv_bias), 2)
    return q, k, v


def _attend(q: Tensor, k: Tensor, v: Tensor, p: AttentionParams, logit_bias=None):
    b, nq, c = q.shape
    nk = k.shape[1]
    h, hd = p.heads, p.head_dim
    qh = ops.permute(ops.reshape(q, (b, nq, h, hd)), (0, 2, 1, 3))
    kt = ops.permute(ops.reshape(k, (b, nk, h, hd)), (0, 2, 3, 1))
    vh = ops.permute(ops.reshape(v, (b, nk, h, hd)), (0, 2, 1, 3))
    with mac_scope(ATTN_SCOPE):
        logits = ops.matmul(qh, kt)
    logits = ops.scale(logits, p.scale)
    if logit_bias is not None:
        logits = ops.add_constant(logits, logit_bias)
    attn = ops.softmax(logits, axis=-1)
    with mac_scope(ATTN_SCOPE):
        out = ops.matmul(attn, vh)
    out = ops.reshape(ops.permute(out, (0, 2, 1, 3)), (b, nq, c))
    return out, attn


def mhsa(x: Tensor, p: AttentionParams, return_attn: bool = False):
    """Standard multi-head self-attention on tokens ``(B, N, C)``."""
    if x.ndim != 3 or x.shape[-1] != p.dim:
        raise DimensionError(f"mhsa expects (B, N, {p.dim}) tokens, got {x.shape}")
    if x.shape[1] < 1:
        raise DimensionError("mhsa needs at least one token")
    q, k, v = _project(x, p)
    out, attn = _attend(q, k, v, p)
    out = ops.linear(out, p.proj_weight, p.proj_bias)
    return (out, attn) if return_attn else out


def window_partition(x: Tensor, k1: int, k2: int, pad_value: float = 0.0) -> tuple[Tensor, WindowGrid]:
    """Zero-pad to window multiples and split into ``(B*m*n, k1*k2, C)`` windows.

    Windows are ordered batch-major, then row-major over the window grid;
    tokens inside a window are row-major.
    """
    if k1 < 1 or k2 < 1:
        raise ValueError(f"window size must be positive, got {k1}x{k2}")
    b, h, w, c = x.shape
    pad_h, pad_w = -h % k1, -w % k2
    m, n = (h + pad_h) // k1, (w + pad_w) // k2
    if pad_h or pad_w:
        x = ops.pad_zeros(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)), value=pad_value)
    x = ops.reshape(x, (b, m, k1, n, k2, c))
    x = ops.permute(x, (0, 1, 3, 2, 4, 5))
    return ops.reshape(x, (b * m * n, k1 * k2, c)), WindowGrid(k1, k2, m, n, pad_h, pad_w)


def window_unpartition(windows: Tensor, grid: WindowGrid, H: int, W: int) -> Tensor:
    """Inverse of :func:`window_partition`, cropping the padding."""
    nw, t, c = windows.shape
    per_image = grid.m * grid.n
    if (
        t != grid.k1 * grid.k2
        or nw % per_image
        or grid.height != H
        or grid.width != W
        or not (0 <= grid.pad_h < grid.k1 and 0 <= grid.pad_w < grid.k2)
    ):
        raise DimensionError(f"window tensor {windows.shape} inconsistent with {grid} for {H}x{W}")
    b = nw // per_image
    x = ops.reshape(windows, (b, grid.m, grid.n, grid.k1, grid.k2, c))
    x = ops.permute(x, (0, 1, 3, 2, 4, 5))
    x = ops.reshape(x, (b, grid.m * grid.k1, grid.n * grid.k2, c))
    if grid.pad_h or grid.pad_w:
        x = ops.crop(x, ((0, b), (0, H), (0, W), (0, c)))
    return x


def lsa(x: Tensor, p: AttentionParams, k1: int, k2: int, pad_value: float = 0.0, return_attn: bool = False):
    """Locally-grouped self-attention on a ``(B, H, W, C)`` map.

    Padded key slots are masked out, so ``pad_value`` never affects the
    outputs of real tokens.
    """
    b, h, w, c = _check_map(x, p)
    windows, grid = window_partition(x, k1, k2, pad_value=pad_value)
    bias = None
    if grid.pad_h or grid.pad_w:
        valid = grid.key_mask()
        bias = np.where(valid, 0.0, mask_value(x.dtype)).astype(x.dtype)
        bias = np.tile(bias, (b, 1))[:, None, None, :]
    q, k, v = _project(windows, p)
    out, attn = _attend(q, k, v, p, bias)
    out = ops.linear(out, p.proj_weight, p.proj_bias)
    out = window_unpartition(out, grid, h, w)
    return (out, attn) if return_attn else out


def reduce_keys(x: Tensor, p: AttentionParams, r: int) -> Tensor:
    """Strided-conv summary of the map (zero-padded to a multiple of ``r``) plus layer norm."""
    b, h, w, c = x.shape
    pad_h, pad_w = -h % r, -w % r
    if pad_h or pad_w:
        x = ops.pad_zeros(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
    sub = ops.conv2d(x, p.sr_weight, p.sr_bias, stride=r)
    sub = ops.reshape(sub, (b, sub.shape[1] * sub.shape[2], c))
    return ops.layer_norm(sub, p.sr_norm.weight, p.sr_norm.bias)


def gsa(x: Tensor, p: AttentionParams, r: int, return_attn: bool = False):
    """Global sub-sampled attention with summarizing window ``r``.

    ``r == 1`` runs exactly :func:`mhsa` on the flattened map.
    """
    b, h, w, c = _check_map(x, p)
    if r < 1 or r > max(h, w):
        raise ValueError(f"reduction ratio {r} invalid for a {h}x{w} map")
    if p.ratio != r:
        raise ValueError(f"params were built for ratio {p.ratio}, called with {r}")
    tokens = ops.reshape(x, (b, h * w, c))
    if r == 1:
        out, attn = mhsa(tokens, p, return_attn=True)
    else:
        q, k, v = _project(tokens, p, kv_source=reduce_keys(x, p, r))
        out, attn = _attend(q, k, v, p)
        out = ops.linear(out, p.proj_weight, p.proj_bias)
    out = ops.reshape(out, (b, h, w, c))
    return (out, attn) if return_attn else out


def sra(x: Tensor, p: AttentionParams, R: int, return_attn: bool = False):
    """Spatial-reduction attention; same mechanism as :func:`gsa`."""
    return gsa(x, p, R, return_attn=return_attn)
