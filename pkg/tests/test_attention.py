import numpy as np
import pytest

from twins import ops
from twins.attention import AttentionParams, gsa, lsa, mhsa, sra, window_partition, window_unpartition
from twins.module import Init
from twins.oracles import gsa_ref, lsa_ref, mhsa_ref
from twins.tensor import DimensionError, Tensor

from conftest import fd_error


def params(dim=8, heads=2, fused=True, ratio=1, seed=0):
    return AttentionParams(Init(seed, np.float64, std=0.4), dim, heads, fused_qkv=fused, ratio=ratio)


def fmap(rng, h, w, c=8, b=1):
    return Tensor(rng.standard_normal((b, h, w, c)))


def test_mhsa_single_token_is_value_then_proj(rng):
    p = params()
    x = rng.standard_normal((1, 1, 8))
    wv, bv = p.qkv_weight.data[:, 16:], p.qkv_bias.data[16:]
    expected = (x @ wv + bv) @ p.proj_weight.data + p.proj_bias.data
    np.testing.assert_allclose(mhsa(Tensor(x), p).data, expected, atol=1e-14)


def test_mhsa_duplicate_tokens_give_equal_rows(rng):
    row = rng.standard_normal(8)
    out = mhsa(Tensor(np.tile(row, (1, 5, 1))), params()).data
    np.testing.assert_allclose(out[0], np.tile(out[0, :1], (5, 1)), atol=1e-14)


def test_mhsa_matches_per_head_oracle(rng):
    p = params()
    x = rng.standard_normal((1, 6, 8))
    np.testing.assert_allclose(mhsa(Tensor(x), p).data, mhsa_ref(x, p), atol=1e-10)


def test_mhsa_head_mismatch():
    with pytest.raises(DimensionError):
        params(dim=8, heads=3)
    with pytest.raises(DimensionError):
        mhsa(Tensor(np.ones((1, 4, 6))), params())


def test_attention_weights_are_distributions(rng):
    _, attn = mhsa(Tensor(rng.standard_normal((2, 7, 8))), params(), return_attn=True)
    assert (attn.data >= 0).all()
    np.testing.assert_allclose(attn.data.sum(-1), 1.0, atol=1e-6)


# ---- windows


def test_single_window_is_flattened_input(rng):
    x = fmap(rng, 3, 4)
    win, grid = window_partition(x, 3, 4)
    np.testing.assert_array_equal(win.data, x.data.reshape(1, 12, 8))
    np.testing.assert_array_equal(window_unpartition(win, grid, 3, 4).data, x.data)


@pytest.mark.parametrize("side,k,count", [(4, 2, 4), (5, 2, 9), (7, 3, 9)])
def test_partition_round_trip(rng, side, k, count):
    x = fmap(rng, side, side, b=2)
    win, grid = window_partition(x, k, k)
    assert win.shape == (2 * count, k * k, 8)
    assert (grid.m * k, grid.n * k) == (-(-side // k) * k,) * 2
    np.testing.assert_array_equal(window_unpartition(win, grid, side, side).data, x.data)


def test_unpartition_rejects_inconsistent_grid(rng):
    win, grid = window_partition(fmap(rng, 4, 4), 2, 2)
    with pytest.raises((DimensionError, ValueError)):
        window_unpartition(win, grid, 5, 4)


# ---- lsa


def test_lsa_single_window_bit_equals_mhsa(rng):
    p = params()
    x = fmap(rng, 3, 5)
    full = mhsa(ops.reshape(x, (1, 15, 8)), p).data.reshape(1, 3, 5, 8)
    np.testing.assert_array_equal(lsa(x, p, 3, 5).data, full)


@pytest.mark.parametrize("h,w,k1,k2", [(4, 4, 2, 2), (5, 5, 2, 2), (6, 7, 3, 2), (8, 8, 3, 3)])
def test_lsa_matches_masked_global_oracle(rng, h, w, k1, k2):
    p = params()
    x = fmap(rng, h, w)
    np.testing.assert_allclose(lsa(x, p, k1, k2).data, lsa_ref(x.data, p, k1, k2), atol=1e-10)


def test_lsa_is_local(rng):
    p = params()
    a = rng.standard_normal((1, 6, 6, 8))
    b = a.copy()
    b[0, 3:, :] += 1.0  # only touches windows in the lower half
    ya, yb = lsa(Tensor(a), p, 3, 3).data, lsa(Tensor(b), p, 3, 3).data
    np.testing.assert_array_equal(ya[0, :3], yb[0, :3])
    assert not np.allclose(ya[0, 3:], yb[0, 3:])


def test_lsa_padding_neutrality(rng):
    p = params()
    x = fmap(rng, 5, 7)
    ref = lsa(x, p, 3, 3).data
    for fill in (1.0, -7.5, 100.0):
        np.testing.assert_allclose(lsa(x, p, 3, 3, pad_value=fill).data, ref, atol=1e-12)


# ---- gsa / sra


def test_gsa_r1_bit_equals_mhsa(rng):
    p = params(fused=False)
    x = fmap(rng, 4, 4)
    full = mhsa(ops.reshape(x, (1, 16, 8)), p).data.reshape(1, 4, 4, 8)
    np.testing.assert_array_equal(gsa(x, p, 1).data, full)
    np.testing.assert_array_equal(sra(x, p, 1).data, full)


def test_gsa_attention_shape(rng):
    _, attn = gsa(fmap(rng, 4, 4, b=2), params(fused=False, ratio=2), 2, return_attn=True)
    assert attn.shape == (2, 2, 16, 4)


def test_sra_key_count_56():
    p = AttentionParams(Init(0), 16, 1, fused_qkv=False, ratio=8)
    _, attn = sra(Tensor(np.zeros((1, 56, 56, 16), dtype=np.float32)), p, 8, return_attn=True)
    assert attn.shape[-1] == 49


@pytest.mark.parametrize("h,w,r", [(4, 4, 2), (5, 6, 2), (6, 6, 3), (7, 5, 4)])
def test_gsa_matches_materialized_oracle(rng, h, w, r):
    p = params(fused=False, ratio=r)
    x = fmap(rng, h, w)
    np.testing.assert_allclose(gsa(x, p, r).data, gsa_ref(x.data, p, r), atol=1e-10)


def test_gsa_rejects_bad_ratio(rng):
    with pytest.raises(ValueError):
        gsa(fmap(rng, 4, 4), params(fused=False, ratio=8), 8)
    with pytest.raises(ValueError):
        gsa(fmap(rng, 4, 4), params(fused=False, ratio=2), 3)


@pytest.mark.parametrize("op", ["lsa", "gsa"])
def test_attention_grad(rng, op):
    p = params(fused=op == "lsa", ratio=1 if op == "lsa" else 2)
    probe = rng.standard_normal((1, 5, 5, 8))

    def loss(x):
        y = lsa(x, p, 2, 2) if op == "lsa" else gsa(x, p, 2)
        return ops.sum_all(ops.mul(y, Tensor(probe)))

    assert fd_error(loss, rng.standard_normal((1, 5, 5, 8))) < 1e-5
