"""Hyperbolic embedding of a causal graph.

Nodes live on the hyperboloid. The objective combines a contrastive term,
where k-hop causal neighbours weighted by |A_mn| compete against all other
nodes in a softmax over negative distances, with a PageRank-weighted pull
toward the origin. Optimization is full-batch Riemannian SGD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import manifold
from .graph import CausalGraph
from .numerics import make_rng

# floor on arcosh'(x) denominators for near-coincident points
_SQRT_FLOOR = 1e-12


class EmbeddingDiverged(FloatingPointError):
    pass


@dataclass
class EmbeddingConfig:
    d: int = 3
    lambda_g: float = 0.1
    k: int = 2
    w: float = 0.15
    lr: float = 1e-3
    epochs: int = 1000
    init_std: float = 0.01
    max_negatives: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if self.lambda_g < 0:
            raise ValueError("lambda_g must be >= 0")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 < self.w < 1:
            raise ValueError("w must lie in (0, 1)")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class HyperboloidEmbedding:
    points: np.ndarray
    graph: CausalGraph
    pagerank: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def poincare(self) -> np.ndarray:
        return manifold.to_poincare(self.points)

    def distances(self) -> np.ndarray:
        return manifold.dist_hyperboloid(self.points[:, None, :], self.points[None, :, :],
                                         check=False)


def _reach(B: np.ndarray, k: int) -> np.ndarray:
    """reach[m, n] is True when a directed path m -> n of length 1..k exists."""
    M = B.shape[0]
    step = B.astype(np.int64)
    frontier = np.eye(M, dtype=np.int64)
    reach = np.zeros((M, M), dtype=bool)
    for _ in range(k):
        frontier = (frontier @ step > 0).astype(np.int64)
        reach |= frontier.astype(bool)
    return reach


def positive_mask(graph: CausalGraph, k: int) -> np.ndarray:
    B = graph.adjacency != 0
    r = _reach(B, k)
    mask = r | r.T
    np.fill_diagonal(mask, False)
    return mask


def khop_positives(graph: CausalGraph, m: int, k: int) -> set[int]:
    """Nodes that reach m, or are reached from m, by a directed path of length <= k."""
    if not 0 <= m < graph.M:
        raise IndexError(f"node {m} out of range for M={graph.M}")
    return {int(n) for n in np.nonzero(positive_mask(graph, k)[m])[0]}


def pagerank(graph: CausalGraph, w: float = 0.15, tol: float = 1e-12,
             max_iter: int = 100_000, start=None) -> np.ndarray:
    """Stationary vector of the in-degree normalised walk with uniform restart.

    The walk moves from a node to one of its parents with probability
    proportional to |A|; nodes without parents jump uniformly.
    """
    if not 0 < w < 1:
        raise ValueError("w must lie in (0, 1)")
    A = np.abs(np.asarray(graph.adjacency, dtype=np.float64))
    M = A.shape[0]
    indeg = A.sum(axis=0)
    # Pt[i, j] = P[j, i]: column j spreads node j's mass over its parents
    Pt = np.full((M, M), 1.0 / M)
    has_in = indeg > 0
    Pt[:, has_in] = A[:, has_in] / indeg[has_in]
    Ph_t = (1.0 - w) * Pt + w / M
    pi = np.full(M, 1.0 / M) if start is None else np.asarray(start, dtype=np.float64)
    pi = pi / pi.sum()
    for _ in range(max_iter):
        nxt = Ph_t @ pi
        nxt /= nxt.sum()
        if np.abs(nxt - pi).sum() < tol:
            return nxt
        pi = nxt
    raise RuntimeError("power iteration did not converge")


def _contrastive_terms(D, W, pos, neg):
    """Per-node contrastive loss and dL/dD for the ordered distance matrix."""
    E = np.exp(-D)
    S = np.where(neg, E, 0.0).sum(axis=1, keepdims=True)
    denom = E + S
    loss = np.where(pos, W * (D + np.log(denom)), 0.0).sum(axis=1)
    Wp = np.where(pos, W, 0.0)
    # d/dD_mn for positive n: w_mn * (1 - e^{-D_mn} / denom_mn)
    grad = Wp * (1.0 - E / denom)
    # d/dD_mn' for negative n': -e^{-D_mn'} * sum_n w_mn / denom_mn
    grad += np.where(neg, -E * (Wp / denom).sum(axis=1, keepdims=True), 0.0)
    return loss, grad


def hyperbolic_loss(points, graph: CausalGraph, pos, pi, lambda_g: float, neg=None):
    """Objective value and ambient Euclidean gradient for every point.

    ``pos`` is the boolean positive-pair mask; negatives default to every
    other node that is neither m nor positive. Nodes without positives add
    nothing to the contrastive term.
    """
    P = np.asarray(points, dtype=np.float64)
    M = P.shape[0]
    pos = np.asarray(pos, dtype=bool)
    if neg is None:
        neg = ~pos & ~np.eye(M, dtype=bool)
    W = np.abs(np.asarray(graph.adjacency, dtype=np.float64))
    X = -manifold.minkowski_inner(P[:, None, :], P[None, :, :])
    D = np.arccosh(np.maximum(X, 1.0))
    con, gD = _contrastive_terms(D, W, pos, neg)

    spec = np.arccosh(np.maximum(P[:, 0], 1.0))
    reg = np.asarray(pi) * spec
    loss = float((con.sum() + lambda_g * reg.sum()) / M)

    G = (gD + gD.T) / M
    np.fill_diagonal(G, 0.0)
    inv = 1.0 / np.sqrt(np.maximum(X * X - 1.0, _SQRT_FLOOR))
    coef = G * inv
    # d arcosh(-<p, q>) / dp = (q0, -q~) / sqrt(x^2 - 1)
    grad = np.empty_like(P)
    grad[:, 0] = coef @ P[:, 0]
    grad[:, 1:] = -(coef @ P[:, 1:])
    grad[:, 0] += lambda_g * np.asarray(pi) / M / np.sqrt(np.maximum(P[:, 0] ** 2 - 1.0, _SQRT_FLOOR))
    return loss, grad


def init_points(M: int, d: int, std: float, rng) -> np.ndarray:
    return manifold.lift(rng.normal(0.0, std, size=(M, d)))


def fit_embeddings(graph: CausalGraph, cfg: EmbeddingConfig) -> HyperboloidEmbedding:
    if graph.M < 2:
        raise ValueError("need at least two nodes")
    rng = make_rng(cfg.seed)
    P = init_points(graph.M, cfg.d, cfg.init_std, rng)
    pi = pagerank(graph, cfg.w)
    pos = positive_mask(graph, cfg.k)
    full_neg = ~pos & ~np.eye(graph.M, dtype=bool)
    history: list[float] = []
    for epoch in range(cfg.epochs):
        neg = full_neg
        if cfg.max_negatives is not None:
            neg = _cap_negatives(full_neg, cfg.max_negatives, rng)
        loss, grad = hyperbolic_loss(P, graph, pos, pi, cfg.lambda_g, neg)
        if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise EmbeddingDiverged(f"non-finite loss at epoch {epoch}")
        history.append(loss)
        P = manifold.rsgd_step(P, grad, cfg.lr)
    return HyperboloidEmbedding(P, graph, pi, history)


def _cap_negatives(neg, cap, rng):
    out = np.zeros_like(neg)
    for m in range(neg.shape[0]):
        idx = np.nonzero(neg[m])[0]
        if idx.size > cap:
            idx = rng.choice(idx, size=cap, replace=False)
        out[m, idx] = True
    return out
