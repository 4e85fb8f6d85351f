import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causalrope import attnlayer as al
from causalrope import rotary
from causalrope.numerics import NonFiniteError, ShapeError, make_rng


def _book():
    return al.Codebook(np.array([0.0, 1.0, 2.0]), make_rng(0).normal(size=(3, 4)))


def test_bin_examples():
    edges = np.array([0.0, 1.0, 2.0])
    assert al.bin_value(0.0, edges) == 0
    assert al.bin_value(-3.0, edges) == 0
    assert al.bin_value(1.5, edges) == 2
    assert al.bin_value(0.5, edges) == 1
    assert al.bin_value(1.0, edges) == 2
    assert al.bin_value(99.0, edges) == 2
    with pytest.raises(NonFiniteError):
        al.bin_value(np.nan, edges)


def test_codebook_validation():
    with pytest.raises(ValueError):
        al.Codebook(np.array([1.0, 1.0]), np.zeros((2, 2)))
    with pytest.raises(ShapeError):
        al.Codebook(np.array([0.0, 1.0]), np.zeros((3, 2)))


def test_codebook_from_data_is_seeded():
    X = make_rng(1).normal(size=(100, 4))
    a = al.Codebook.from_data(X, B=5, D=6, seed=2)
    b = al.Codebook.from_data(X, B=5, D=6, seed=2)
    assert a.B == 5 and a.D == 6
    assert np.array_equal(a.table, b.table) and np.array_equal(a.edges, b.edges)


def test_contextual_embed_examples():
    book = _book()
    assert np.array_equal(al.contextual_embed(book, np.zeros(3)), np.tile(book.table[0], (3, 1)))
    out = al.contextual_embed(book, [1.5, 1.5, 0.2])
    assert np.array_equal(out[0], out[1])
    assert np.array_equal(out, al.contextual_embed(_book(), [1.5, 1.5, 0.2]))


def test_fuse_is_rotation():
    v = np.array([1.0, -2.0, 0.5, 3.0])
    assert np.array_equal(al.fuse(v, np.zeros(2)), v)
    phi = np.array([0.3, -0.7])
    assert np.linalg.norm(al.fuse(v, phi)) == pytest.approx(np.linalg.norm(v))
    assert np.allclose(al.fuse(al.fuse(v, phi), -phi), v)


def test_single_feature_attends_to_itself():
    W_q, W_k, W_v = al.init_projections(4, seed=1)
    v = make_rng(2).normal(size=(1, 4))
    out, attn = al.attention_layer(v, np.zeros((1, 2)), W_q, W_k, W_v)
    assert np.array_equal(attn, [[1.0]])
    assert np.allclose(out[0], W_v @ v[0])


def test_equal_angles_match_the_position_free_layer():
    rng = make_rng(3)
    V = rng.normal(size=(5, 6))
    W_q, W_k, W_v = al.init_projections(6, seed=4)
    _, with_pos = al.attention_layer(V, np.full((5, 3), 0.4), W_q, W_k, W_v)
    _, without = al.attention_layer(V, np.zeros((5, 3)), W_q, W_k, W_v)
    assert np.allclose(with_pos, without, atol=1e-12)


def test_position_alone_differentiates_features():
    v = make_rng(5).normal(size=4)
    V = np.tile(v, (3, 1))
    angles = np.array([[0.0, 0.0], [0.6, -0.4], [-0.7, 0.7]])
    _, attn = al.attention_layer(V, angles, np.eye(4) * 3, np.eye(4) * 3, np.eye(4))
    assert attn.max(axis=1).min() > 1 / 3 + 1e-3


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 32))
def test_softmax_rows_sum_to_one(M, seed):
    rng = make_rng(seed)
    V = rng.normal(size=(M, 6))
    angles = rng.uniform(-math.pi / 4, math.pi / 4, (M, 3))
    out, attn = al.attention_layer(V, angles, *al.init_projections(6, seed=seed))
    assert np.allclose(attn.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert out.shape == (M, 6)


def test_raw_scores_are_rotary_scores():
    rng = make_rng(6)
    V = rng.normal(size=(3, 4))
    phi = rng.uniform(-0.7, 0.7, (3, 2))
    W_q, W_k, W_v = al.init_projections(4, seed=7)
    _, attn = al.attention_layer(V, phi, W_q, W_k, W_v, scaled=False)
    S = np.array([[rotary.attention_score(W_q @ V[m], W_k @ V[n], phi[m], phi[n]) for n in range(3)]
                  for m in range(3)])
    assert np.allclose(attn, al.softmax_rows(S), atol=1e-12)


def test_attention_layer_shape_errors():
    W = np.eye(4)
    with pytest.raises(ShapeError):
        al.attention_layer(np.zeros((3, 4)), np.zeros((2, 2)), W, W, W)
    with pytest.raises(ShapeError):
        al.attention_layer(np.zeros((3, 4)), np.zeros((3, 2)), np.eye(3), W, W)


def test_aggregate_examples():
    row = np.array([[1.0, -2.0, 3.0]])
    assert np.array_equal(al.aggregate(row, "mean"), row[0])
    assert np.array_equal(al.aggregate(row, "max"), row[0])
    assert np.array_equal(al.aggregate(np.vstack([row, -row]), "mean"), np.zeros(3))
    with pytest.raises(ValueError):
        al.aggregate(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        al.aggregate(row, "sum")


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)))
def test_max_dominates_mean(H):
    assert np.all(al.aggregate(H, "max") >= al.aggregate(H, "mean") - 1e-12)


@pytest.mark.parametrize("bad", [dict(D=5), dict(D=4, B=0), dict(D=4, aggregation="sum")])
def test_config_invariants(bad):
    with pytest.raises(ValueError):
        al.AttentionConfig(**bad)
