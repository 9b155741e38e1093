import numpy as np
import pytest

from twins import ops
from twins.blocks import (
    BlockKind,
    EncoderBlock,
    FFNParams,
    HeadParams,
    PatchEmbedParams,
    PegParams,
    classify_head,
    encoder_block,
    ffn,
    patch_embed,
    peg,
)
from twins.module import Init
from twins.tensor import DimensionError, Tensor

from conftest import fd_error

KINDS = [(BlockKind.LSA_BLOCK, dict(window=(2, 2))), (BlockKind.GSA_BLOCK, dict(ratio=2)), (BlockKind.SRA_BLOCK, dict(ratio=2)), (BlockKind.GSA_BLOCK, dict(ratio=1))]


def zero_all(module):
    for p in module.parameters():
        p.data = np.zeros_like(p.data)


def test_block_letters():
    assert [BlockKind.from_letter(c) for c in "lGs"] == [BlockKind.LSA_BLOCK, BlockKind.GSA_BLOCK, BlockKind.SRA_BLOCK]
    with pytest.raises(ValueError):
        BlockKind.from_letter("X")


def test_ffn_zero_weights_give_zero(rng):
    p = FFNParams(Init(0, np.float64), 8, 4)
    assert p.fc1_weight.shape == (8, 32) and p.fc2_weight.shape == (32, 8)
    zero_all(p)
    assert not ffn(Tensor(rng.standard_normal((2, 3, 8))), p).data.any()


@pytest.mark.parametrize("kind,kw", KINDS)
def test_zero_block_is_identity(rng, kind, kw):
    blk = EncoderBlock(Init(0, np.float64), kind, 8, 2, 4, **kw)
    zero_all(blk)
    x = rng.standard_normal((1, 5, 5, 8))
    np.testing.assert_array_equal(encoder_block(Tensor(x), blk).data, x)


@pytest.mark.parametrize("kind,kw", KINDS)
def test_block_grad(rng, kind, kw):
    blk = EncoderBlock(Init(3, np.float64, std=0.3), kind, 8, 2, 2, **kw)
    probe = Tensor(rng.standard_normal((1, 5, 5, 8)))
    assert fd_error(lambda x: ops.sum_all(ops.mul(encoder_block(x, blk), probe)), rng.standard_normal((1, 5, 5, 8))) < 1e-5


def test_block_requires_window_or_ratio():
    with pytest.raises(ValueError):
        EncoderBlock(Init(0), BlockKind.LSA_BLOCK, 8, 2, 4)
    with pytest.raises(ValueError):
        EncoderBlock(Init(0), BlockKind.GSA_BLOCK, 8, 2, 4, ratio=0)


def test_block_channel_mismatch():
    blk = EncoderBlock(Init(0), BlockKind.GSA_BLOCK, 8, 2, 4)
    with pytest.raises(DimensionError):
        encoder_block(Tensor(np.zeros((1, 4, 4, 6), dtype=np.float32)), blk)


def test_peg_zero_kernel_is_identity(rng):
    p = PegParams(Init(0, np.float64), 4)
    zero_all(p)
    x = rng.standard_normal((1, 5, 5, 4))
    np.testing.assert_array_equal(peg(Tensor(x), p).data, x)


def test_peg_box_sum():
    p = PegParams(Init(0, np.float64), 2)
    p.weight.data = np.ones((3, 3, 1, 2))
    p.bias.data = np.zeros(2)
    out = peg(Tensor(np.full((1, 5, 5, 2), 0.5)), p).data
    np.testing.assert_allclose(out[0, 2, 2], 0.5 + 9 * 0.5)


def test_peg_circular_padding_is_translation_equivariant(rng):
    p = PegParams(Init(0, np.float64, std=1.0), 3)
    x = rng.standard_normal((1, 6, 6, 3))
    shifted = np.roll(x, 2, axis=2)
    a = peg(Tensor(x), p, padding_mode="circular").data
    b = peg(Tensor(shifted), p, padding_mode="circular").data
    np.testing.assert_allclose(np.roll(a, 2, axis=2), b, atol=1e-12)


def test_patch_embed_geometry():
    p = PatchEmbedParams(Init(0), 4, 3, 8)
    assert patch_embed(Tensor(np.zeros((1, 224, 224, 3), dtype=np.float32)), p).shape == (1, 56, 56, 8)
    assert patch_embed(Tensor(np.zeros((1, 225, 225, 3), dtype=np.float32)), p).shape == (1, 57, 57, 8)


def test_patch_embed_p1_is_pointwise_projection(rng):
    p = PatchEmbedParams(Init(0, np.float64), 1, 3, 3)
    p.proj_weight.data = np.eye(3).reshape(1, 1, 3, 3)
    x = rng.standard_normal((1, 4, 4, 3))
    expected = ops.layer_norm(Tensor(x), p.norm.weight, p.norm.bias).data
    np.testing.assert_allclose(patch_embed(Tensor(x), p).data, expected, atol=1e-14)


def test_head_zero_weights_and_constant_map():
    p = HeadParams(Init(0, np.float64, std=1.0), 4, 3)
    vec = np.array([0.5, -1.0, 2.0, 0.0])
    out = classify_head(Tensor(np.tile(vec, (2, 3, 3, 1))), p).data
    token = classify_head(Tensor(vec.reshape(1, 1, 1, 4)), p).data
    np.testing.assert_allclose(out, np.tile(token, (2, 1)), atol=1e-12)
    zero_all(p)
    assert not classify_head(Tensor(np.tile(vec, (2, 3, 3, 1))), p).data.any()
