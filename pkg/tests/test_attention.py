"""k-NN attention: selection masks, full-attention and argmax limits,
transformer-layer invariances, positional encodings."""

import math

import numpy as np
import pytest

from mfst import tensor as T
from mfst.tensor import Tensor
from mfst.attention import (AttentionConfig, Linear, TransformerLayer,
                            add_positional, build_positional_table,
                            knn_attention, topk_keep_mask)


def rand_qkv(rng, b=2, h=2, n=6, d=4):
    mk = lambda: Tensor(rng.standard_normal((b, h, n, d)).astype(np.float32))
    return mk(), mk(), mk()


# ---------------------------------------------------------------------------
# top-k selection
# ---------------------------------------------------------------------------

def test_topk_mask_simple_row():
    scores = np.array([[0.1, 0.9, 0.5, 0.3]])
    np.testing.assert_array_equal(topk_keep_mask(scores, 2),
                                  [[False, True, True, False]])


def test_topk_mask_breaks_ties_toward_lower_index():
    scores = np.array([[1.0, 2.0, 2.0, 2.0]])
    np.testing.assert_array_equal(topk_keep_mask(scores, 2),
                                  [[False, True, True, False]])


def test_topk_mask_counts_exact(rng):
    scores = rng.standard_normal((3, 4, 7))
    for k in range(1, 8):
        mask = topk_keep_mask(scores, k)
        np.testing.assert_array_equal(mask.sum(axis=-1), k)


def test_topk_mask_selects_largest(rng):
    scores = rng.standard_normal((5, 9))
    mask = topk_keep_mask(scores, 4)
    for row, m in zip(scores, mask):
        assert set(row[m]) == set(np.sort(row)[-4:])


def test_topk_rejects_k_above_n():
    with pytest.raises(ValueError):
        topk_keep_mask(np.zeros((2, 3)), 4)


# ---------------------------------------------------------------------------
# attention limits
# ---------------------------------------------------------------------------

def test_knn_equals_full_attention_when_k_is_n(rng):
    q, k, v = rand_qkv(rng)
    full = knn_attention(q, k, v, 0).data
    topn = knn_attention(q, k, v, q.shape[-2]).data
    np.testing.assert_allclose(topn, full, atol=1e-6)


def test_knn_k1_reproduces_row_max_selection(rng):
    q, k, v = rand_qkv(rng)
    out = knn_attention(q, k, v, 1).data
    scores = (q.data @ k.data.transpose(0, 1, 3, 2)) / math.sqrt(q.shape[-1])
    picked = np.take_along_axis(
        v.data, scores.argmax(axis=-1)[..., None], axis=-2)
    np.testing.assert_array_equal(out, picked)


def test_knn_matches_dense_softmax_with_mask(rng):
    # independent reference: mask scores to -inf, dense numpy softmax
    q, k, v = rand_qkv(rng, b=1, h=1)
    kk = 3
    scores = (q.data @ k.data.transpose(0, 1, 3, 2)) / math.sqrt(q.shape[-1])
    keep = topk_keep_mask(scores, kk)
    masked = np.where(keep, scores, -np.inf)
    e = np.exp(masked - masked.max(axis=-1, keepdims=True))
    ref = (e / e.sum(axis=-1, keepdims=True)) @ v.data
    np.testing.assert_allclose(knn_attention(q, k, v, kk).data, ref, atol=1e-6)


# ---------------------------------------------------------------------------
# transformer layer
# ---------------------------------------------------------------------------

def test_layer_permutation_equivariance(rng):
    cfg = AttentionConfig(d_model=16, n_heads=4, knn_k=0)
    layer = TransformerLayer("l", cfg, np.random.default_rng(3))
    x = rng.standard_normal((2, 10, 16)).astype(np.float32)
    perm = rng.permutation(10)
    out = layer(Tensor(x)).data
    out_perm = layer(Tensor(x[:, perm])).data
    np.testing.assert_allclose(out_perm, out[:, perm], atol=1e-5)


def test_layer_is_identity_with_zeroed_output_projections(rng):
    cfg = AttentionConfig(d_model=8, n_heads=2, knn_k=0)
    layer = TransformerLayer("l", cfg, np.random.default_rng(0))
    layer.out.w.data[:] = 0.0
    layer.mlp2.w.data[:] = 0.0
    x = rng.standard_normal((3, 5, 8)).astype(np.float32)
    np.testing.assert_array_equal(layer(Tensor(x)).data, x)


def test_layer_default_k_is_seventy_percent():
    cfg = AttentionConfig(d_model=8, n_heads=2)
    assert cfg.effective_k(10) == 7
    assert cfg.effective_k(3) == 3
    assert AttentionConfig(d_model=8, n_heads=2, knn_k=0).effective_k(10) == 0


def test_layer_rejects_wrong_width(rng):
    layer = TransformerLayer("l", AttentionConfig(d_model=8, n_heads=2),
                             np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer(Tensor(np.zeros((1, 4, 6), np.float32)))


def test_config_validation():
    with pytest.raises(ValueError):
        AttentionConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        AttentionConfig(d_model=8, n_heads=2, knn_k=-1)


def test_linear_zero_init_scale_gives_zero_map(rng):
    lin = Linear("z", 4, 4, np.random.default_rng(0), init_scale=0.0)
    x = Tensor(rng.standard_normal((2, 4)).astype(np.float32))
    np.testing.assert_array_equal(lin(x).data, 0.0)


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------

def test_positional_row_zero_values():
    table = build_positional_table(8, 6)
    np.testing.assert_array_equal(table[0, 0::2], 0.0)
    np.testing.assert_array_equal(table[0, 1::2], 1.0)


def test_positional_matches_direct_float64():
    max_len, d = 32, 16
    table = build_positional_table(max_len, d)
    for p in range(max_len):
        for i in range(d):
            arg = p / 10000.0 ** ((i - i % 2) / d)
            want = math.sin(arg) if i % 2 == 0 else math.cos(arg)
            assert abs(float(table[p, i]) - want) <= 1e-6


def test_add_positional_broadcasts_over_batch(rng):
    table = build_positional_table(10, 6)
    x = rng.standard_normal((3, 7, 6)).astype(np.float32)
    out = add_positional(Tensor(x), table).data
    np.testing.assert_allclose(out, x + table[None, :7], atol=1e-6)


def test_add_positional_validates_geometry():
    table = build_positional_table(4, 6)
    with pytest.raises(ValueError):
        add_positional(Tensor(np.zeros((1, 5, 6), np.float32)), table)
    with pytest.raises(ValueError):
        add_positional(Tensor(np.zeros((1, 3, 4), np.float32)), table)
