"""Slow, loop-based float64 reference implementations.

Nothing here calls into :mod:`twins.ops` or :mod:`twins.attention`; the
oracles read raw weight arrays and recompute everything with explicit
loops so they can check the vectorized code independently.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def naive_conv2d(x, w, b=None, stride=1, padding=0, groups=1) -> np.ndarray:
    """x: (B, H, W, Cin); w: (kh, kw, Cin/groups, Cout)."""
    bsz, h, wd, cin = x.shape
    kh, kw, cin_g, cout = w.shape
    cout_g = cout // groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, ho, wo, cout))
    for n in range(bsz):
        for i in range(ho):
            for j in range(wo):
                for o in range(cout):
                    g = o // cout_g
                    s = 0.0 if b is None else float(b[o])
                    for u in range(kh):
                        for v in range(kw):
                            r, c = i * stride + u - padding, j * stride + v - padding
                            if 0 <= r < h and 0 <= c < wd:
                                for ci in range(cin_g):
                                    s += x[n, r, c, g * cin_g + ci] * w[u, v, ci, o]
                    out[n, i, j, o] = s
    return out


def softmax_ref(x: np.ndarray) -> np.ndarray:
    """Direct exp / sum along the last axis (no stabilization)."""
    e = np.exp(np.asarray(x, dtype=np.float64))
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm_ref(x: np.ndarray, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    res = out.reshape(-1, x.shape[-1])
    for i, row in enumerate(flat):
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        res[i] = (row - mu) / math.sqrt(var + eps) * gamma + beta
    return out


def _weights(p) -> dict[str, np.ndarray]:
    c = p.dim
    if p.fused_qkv:
        w, b = p.qkv_weight.data, p.qkv_bias.data
        wq, wk, wv = w[:, :c], w[:, c : 2 * c], w[:, 2 * c :]
        bq, bk, bv = b[:c], b[c : 2 * c], b[2 * c :]
    else:
        wq, bq = p.q_weight.data, p.q_bias.data
        wk, wv = p.kv_weight.data[:, :c], p.kv_weight.data[:, c:]
        bk, bv = p.kv_bias.data[:c], p.kv_bias.data[c:]
    return {"wq": wq, "bq": bq, "wk": wk, "bk": bk, "wv": wv, "bv": bv, "wo": p.proj_weight.data, "bo": p.proj_bias.data}


def attention_ref(
    queries: np.ndarray,
    keys: np.ndarray,
    p,
    allowed: Callable[[int, int], bool] | None = None,
) -> np.ndarray:
    """Per-head, per-query attention for one image.

    ``queries`` (Nq, C) and ``keys`` (Nk, C) are token features before
    projection; ``allowed(i, j)`` restricts which keys query ``i`` sees.
    """
    wts = _weights(p)
    q = queries @ wts["wq"] + wts["bq"]
    k = keys @ wts["wk"] + wts["bk"]
    v = keys @ wts["wv"] + wts["bv"]
    hd = p.head_dim
    scale = 1.0 / math.sqrt(hd)
    out = np.zeros((len(queries), p.dim))
    for h in range(p.heads):
        sl = slice(h * hd, (h + 1) * hd)
        for i in range(len(queries)):
            idx = [j for j in range(len(keys)) if allowed is None or allowed(i, j)]
            logits = np.array([float(q[i, sl] @ k[j, sl]) * scale for j in idx])
            weights = softmax_ref(logits - logits.max())
            out[i, sl] = sum(wj * v[j, sl] for wj, j in zip(weights, idx))
    return out @ wts["wo"] + wts["bo"]


def mhsa_ref(tokens: np.ndarray, p) -> np.ndarray:
    """tokens: (B, N, C)."""
    return np.stack([attention_ref(t, t, p) for t in tokens])


def lsa_ref(x: np.ndarray, p, k1: int, k2: int) -> np.ndarray:
    """Global attention over real tokens with a block-diagonal window mask."""
    bsz, h, w, c = x.shape
    win = [(i // k1, j // k2) for i in range(h) for j in range(w)]
    out = []
    for n in range(bsz):
        t = x[n].reshape(h * w, c)
        out.append(attention_ref(t, t, p, lambda a, b: win[a] == win[b]).reshape(h, w, c))
    return np.stack(out)


def subsample_ref(x: np.ndarray, p, r: int) -> np.ndarray:
    """Explicit strided-conv summaries of each r x r cell, then layer norm; (Nk, C) for one image."""
    h, w, c = x.shape
    hp, wp = -(-h // r) * r, -(-w // r) * r
    xp = np.zeros((hp, wp, c))
    xp[:h, :w] = x
    kernel, bias = p.sr_weight.data, p.sr_bias.data
    cells = []
    for a in range(hp // r):
        for b in range(wp // r):
            s = bias.astype(np.float64).copy()
            for u in range(r):
                for v in range(r):
                    s = s + xp[a * r + u, b * r + v] @ kernel[u, v]
            cells.append(s)
    return layer_norm_ref(np.array(cells), p.sr_norm.weight.data, p.sr_norm.bias.data)


def gsa_ref(x: np.ndarray, p, r: int) -> np.ndarray:
    bsz, h, w, c = x.shape
    out = []
    for n in range(bsz):
        t = x[n].reshape(h * w, c)
        keys = t if r == 1 else subsample_ref(x[n], p, r)
        out.append(attention_ref(t, keys, p).reshape(h, w, c))
    return np.stack(out)


# ---------------------------------------------------------------- finite differences


def central_difference(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5, indices: Sequence[int] | None = None):
    """Central-difference gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place).

    With ``indices`` only those flat positions are probed; the rest are NaN.
    """
    grad = np.full(arr.shape, np.nan) if indices is not None else np.zeros(arr.shape)
    flat = arr.reshape(-1)
    assert np.shares_memory(flat, arr)
    for i in range(flat.size) if indices is None else indices:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|), ignoring unprobed (NaN) entries."""
    mask = ~np.isnan(numeric)
    a, n = np.asarray(analytic)[mask], numeric[mask]
    if a.size == 0:
        return 0.0
    denom = max(np.abs(a).max(), np.abs(n).max(), 1e-8)
    return float(np.abs(a - n).max() / denom)
