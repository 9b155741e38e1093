"""Encoder building blocks: FFN, pre-norm attention block, PEG, patch embedding, head."""

from __future__ import annotations

import enum
import math

from . import ops
from .attention import AttentionParams, gsa, lsa, sra
from .module import Init, LayerNormParams, Module
from .tensor import DimensionError, Tensor

LN_EPS = 1e-5


class BlockKind(enum.Enum):
    LSA_BLOCK = "L"
    GSA_BLOCK = "G"
    SRA_BLOCK = "S"

    @classmethod
    def from_letter(cls, letter: str) -> "BlockKind":
        try:
            return cls(letter.upper())
        except ValueError:
            raise ValueError(f"unknown block letter {letter!r}; use L, G or S") from None


class FFNParams(Module):
    def __init__(self, init: Init, dim: int, mlp_ratio: float):
        if mlp_ratio < 1:
            raise ValueError(f"mlp_ratio must be >= 1, got {mlp_ratio}")
        hidden = int(dim * mlp_ratio)
        self.fc1_weight = init.trunc_normal(dim, hidden)
        self.fc1_bias = init.zeros(hidden)
        self.fc2_weight = init.trunc_normal(hidden, dim)
        self.fc2_bias = init.zeros(dim)


def ffn(x: Tensor, p: FFNParams) -> Tensor:
    """linear -> GELU -> linear over the channel axis."""
    h = ops.gelu(ops.linear(x, p.fc1_weight, p.fc1_bias))
    return ops.linear(h, p.fc2_weight, p.fc2_bias)


class EncoderBlock(Module):
    """One pre-norm residual block; ``kind`` picks the attention op.

    ``window`` is the LSA window ``(k1, k2)``; ``ratio`` the GSA/SRA
    summarizing size.
    """

    def __init__(
        self,
        init: Init,
        kind: BlockKind,
        dim: int,
        heads: int,
        mlp_ratio: float,
        window: tuple[int, int] | None = None,
        ratio: int = 1,
    ):
        self.kind = kind
        if kind is BlockKind.LSA_BLOCK:
            if window is None or min(window) < 1:
                raise ValueError("an LSA block needs a positive window (k1, k2)")
            self.window = tuple(window)
            self.ratio = 1
        else:
            if ratio < 1:
                raise ValueError(f"{kind.name} needs ratio >= 1, got {ratio}")
            self.window = None
            self.ratio = ratio
        self.dim = dim
        self.norm1 = LayerNormParams(init, dim)
        self.attn = AttentionParams(init, dim, heads, fused_qkv=kind is BlockKind.LSA_BLOCK, ratio=self.ratio)
        self.norm2 = LayerNormParams(init, dim)
        self.mlp = FFNParams(init, dim, mlp_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        return encoder_block(x, self)


def _attention(x: Tensor, blk: EncoderBlock) -> Tensor:
    if blk.kind is BlockKind.LSA_BLOCK:
        return lsa(x, blk.attn, *blk.window)
    if blk.kind is BlockKind.GSA_BLOCK:
        return gsa(x, blk.attn, blk.ratio)
    return sra(x, blk.attn, blk.ratio)


def encoder_block(x: Tensor, blk: EncoderBlock) -> Tensor:
    if x.ndim != 4 or x.shape[-1] != blk.dim:
        raise DimensionError(f"block expects (B, H, W, {blk.dim}), got {x.shape}")
    h = ops.add(_attention(ops.layer_norm(x, blk.norm1.weight, blk.norm1.bias, LN_EPS), blk), x)
    return ops.add(ffn(ops.layer_norm(h, blk.norm2.weight, blk.norm2.bias, LN_EPS), blk.mlp), h)


class PegParams(Module):
    """Depthwise 3x3 conv (stride 1, padding 1, groups = C) with bias."""

    def __init__(self, init: Init, dim: int):
        self.dim = dim
        self.weight = init.trunc_normal(3, 3, 1, dim)
        self.bias = init.zeros(dim)


def peg(x: Tensor, p: PegParams, padding_mode: str = "zeros") -> Tensor:
    """Conditional positional encoding: ``x + dwconv3x3(x)``."""
    if x.ndim != 4 or x.shape[-1] != p.dim:
        raise DimensionError(f"peg expects (B, H, W, {p.dim}), got {x.shape}")
    enc = ops.conv2d(x, p.weight, p.bias, stride=1, padding=1, groups=p.dim, padding_mode=padding_mode)
    return ops.add(x, enc)


class PatchEmbedParams(Module):
    def __init__(self, init: Init, patch_size: int, in_dim: int, out_dim: int):
        self.patch_size = patch_size
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.proj_weight = init.trunc_normal(patch_size, patch_size, in_dim, out_dim)
        self.proj_bias = init.zeros(out_dim)
        self.norm = LayerNormParams(init, out_dim)


def patch_embed(x: Tensor, p: PatchEmbedParams) -> Tensor:
    """Conv with kernel = stride = P after zero-padding to a multiple of P, then layer norm."""
    if x.ndim != 4 or x.shape[-1] != p.in_dim:
        raise DimensionError(f"patch_embed expects (B, H, W, {p.in_dim}), got {x.shape}")
    P = p.patch_size
    _, h, w, _ = x.shape
    pad_h, pad_w = -h % P, -w % P
    if pad_h or pad_w:
        x = ops.pad_zeros(x, ((0, 0), (0, pad_h), (0, pad_w), (0, 0)))
    x = ops.conv2d(x, p.proj_weight, p.proj_bias, stride=P)
    return ops.layer_norm(x, p.norm.weight, p.norm.bias, LN_EPS)


def embed_grid(h: int, w: int, patch_size: int) -> tuple[int, int]:
    return math.ceil(h / patch_size), math.ceil(w / patch_size)


class HeadParams(Module):
    def __init__(self, init: Init, dim: int, num_classes: int):
        self.dim = dim
        self.num_classes = num_classes
        self.norm = LayerNormParams(init, dim)
        self.weight = init.trunc_normal(dim, num_classes)
        self.bias = init.zeros(num_classes)


def classify_head(x: Tensor, p: HeadParams) -> Tensor:
    """layer norm -> global average pool over tokens -> linear."""
    if x.shape[-1] != p.dim:
        raise DimensionError(f"head expects {p.dim} channels, got {x.shape}")
    x = ops.layer_norm(x, p.norm.weight, p.norm.bias, LN_EPS)
    return ops.linear(ops.global_avg_pool(x), p.weight, p.bias)
