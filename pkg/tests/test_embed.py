import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalrope import manifold as mf
from causalrope.embed import (EmbeddingConfig, fit_embeddings, hyperbolic_loss, init_points,
                              khop_positives, pagerank, positive_mask)
from causalrope.graph import CausalGraph
from causalrope.numerics import fd_gradient_check, make_rng
from causalrope.synthgen import assign_weights, gen_ba_dag


def _graph(M, edges):
    A = np.zeros((M, M))
    for i, j, *w in edges:
        A[i, j] = w[0] if w else 1.0
    return CausalGraph.from_adjacency(A)


CHAIN = _graph(3, [(0, 1), (1, 2)])


def test_khop_examples():
    assert khop_positives(CHAIN, 1, 1) == {0, 2}
    assert khop_positives(CHAIN, 0, 2) == {1, 2}
    assert khop_positives(CHAIN, 0, 1) == {1}
    assert khop_positives(_graph(3, [(0, 1)]), 2, 2) == set()
    with pytest.raises(IndexError):
        khop_positives(CHAIN, 3, 1)


def test_pagerank_empty_graph_is_uniform():
    assert np.allclose(pagerank(_graph(4, []), 0.15), 0.25, atol=1e-12)


def test_pagerank_two_node_chain():
    # stationary system solved by hand: pi = (37, 20) / 57
    pi = pagerank(_graph(2, [(0, 1)]), 0.15)
    assert np.allclose(pi, [37 / 57, 20 / 57], atol=1e-9)
    assert pi.sum() == pytest.approx(1.0, abs=1e-12)


def test_pagerank_star_center_ranks_highest():
    pi = pagerank(_graph(5, [(0, j) for j in range(1, 5)]), 0.15)
    assert np.all(pi[0] > pi[1:])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 15), st.integers(0, 2 ** 32), st.floats(0.05, 0.95), st.floats(0.1, 10))
def test_pagerank_is_a_scale_free_unique_distribution(M, seed, w, scale):
    g = CausalGraph.from_dag(assign_weights(gen_ba_dag(M, 1, seed=seed), seed=seed))
    pi = pagerank(g, w)
    assert abs(pi.sum() - 1) < 1e-12 and np.all(pi > 0)
    start = make_rng(seed).random(M) + 0.01
    assert np.allclose(pagerank(g, w, start=start), pi, atol=1e-10)
    scaled = CausalGraph.from_adjacency(scale * g.adjacency)
    assert np.allclose(pagerank(scaled, w), pi, atol=1e-10)
    assert np.array_equal(positive_mask(scaled, 2), positive_mask(g, 2))


def test_pagerank_rejects_bad_restart():
    with pytest.raises(ValueError):
        pagerank(CHAIN, 1.0)


def _single_term(points, A, pos, neg):
    g = CausalGraph.from_adjacency(A)
    loss, _ = hyperbolic_loss(points, g, pos, np.zeros(A.shape[0]), 0.0, neg)
    return loss * A.shape[0]


def test_loss_with_no_negatives_is_zero():
    A = np.array([[0.0, 0.7], [0.0, 0.0]])
    pts = mf.lift(np.array([[0.0, 0.0], [0.4, 0.1]]))
    pos = np.array([[False, True], [False, False]])
    assert _single_term(pts, A, pos, np.zeros((2, 2), bool)) == pytest.approx(0.0, abs=1e-12)


def test_loss_with_symmetric_softmax():
    A = np.zeros((3, 3))
    A[0, 1] = 0.5
    # nodes 1 and 2 sit at equal distance from node 0
    pts = mf.lift(np.array([[0.0, 0.0], [0.5, 0.0], [-0.5, 0.0]]))
    pos = np.zeros((3, 3), bool)
    neg = np.zeros((3, 3), bool)
    pos[0, 1] = True
    neg[0, 2] = True
    assert _single_term(pts, A, pos, neg) == pytest.approx(0.5 * math.log(2), abs=1e-12)


def test_regulariser_vanishes_at_origin():
    pts = np.tile(mf.origin(2), (2, 1))
    g = _graph(2, [])
    loss, _ = hyperbolic_loss(pts, g, np.zeros((2, 2), bool), np.array([0.3, 0.7]), 5.0)
    assert loss == 0.0


def test_loss_gradient_matches_finite_differences():
    rng = make_rng(2)
    g = CausalGraph.from_dag(assign_weights(gen_ba_dag(8, 2, seed=3), seed=4))
    pts = init_points(8, 3, 0.5, rng)
    pos = positive_mask(g, 2)
    pi = pagerank(g)
    _, grad = hyperbolic_loss(pts, g, pos, pi, 0.1)
    err = fd_gradient_check(lambda P: hyperbolic_loss(P, g, pos, pi, 0.1)[0], grad, pts, eps=1e-6)
    assert err < 1e-4


def test_zero_epochs_returns_initialisation():
    cfg = EmbeddingConfig(epochs=0, seed=3)
    emb = fit_embeddings(CHAIN, cfg)
    assert np.array_equal(emb.points, init_points(3, cfg.d, cfg.init_std, make_rng(3)))
    assert emb.loss_history == []


def test_trained_points_stay_on_the_sheet():
    g = CausalGraph.from_dag(assign_weights(gen_ba_dag(10, 2, seed=1), seed=2))
    emb = fit_embeddings(g, EmbeddingConfig(epochs=200, lr=0.05, seed=1))
    assert np.all(np.abs(mf.minkowski_inner(emb.points, emb.points) + 1) < 1e-9)
    assert emb.poincare().shape == (10, 3)


def test_loss_decreases_over_ten_epoch_windows():
    ok = 0
    for seed in range(10):
        g = CausalGraph.from_dag(assign_weights(gen_ba_dag(10, 2, seed=seed), seed=(seed, 1)))
        h = fit_embeddings(g, EmbeddingConfig(epochs=200, seed=seed)).loss_history
        ok += all(h[i + 10] <= h[i] for i in range(len(h) - 10))
    assert ok >= 9


@pytest.mark.parametrize("bad", [dict(d=1), dict(lambda_g=-1), dict(k=0), dict(w=0), dict(lr=0),
                                 dict(epochs=-1)])
def test_config_invariants(bad):
    with pytest.raises(ValueError):
        EmbeddingConfig(**bad)
