"""One softmax attention layer over features with rotary causal positions.

Measurements are binned into a frozen random codebook, queries and keys are
rotated by each feature's angles, and per-feature outputs are pooled into a
single observation embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rotary
from .numerics import NonFiniteError, ShapeError, make_rng


@dataclass(frozen=True)
class Codebook:
    edges: np.ndarray
    table: np.ndarray

    def __post_init__(self):
        if self.edges.ndim != 1 or self.edges.size < 2 or np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly ascending with at least two entries")
        if self.table.shape[0] != self.edges.size:
            raise ShapeError(f"table needs {self.edges.size} rows, has {self.table.shape[0]}")
        if not np.all(np.isfinite(self.table)):
            raise NonFiniteError("codebook has non-finite embeddings")

    @property
    def B(self) -> int:
        return self.edges.size - 1

    @property
    def D(self) -> int:
        return self.table.shape[1]

    @classmethod
    def from_data(cls, X, B: int = 10, D: int = 6, seed=0) -> "Codebook":
        """Quantile edges over the positive training measurements; N(0, 1/D) table."""
        X = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise NonFiniteError("training data has non-finite entries")
        positive = X[X > 0]
        if positive.size == 0:
            edges = np.linspace(0.0, 1.0, B + 1)
        else:
            edges = np.unique(np.quantile(positive, np.linspace(0.0, 1.0, B + 1)))
            if edges.size < 2:
                edges = np.array([edges[0], edges[0] + 1.0])
        rng = make_rng(seed)
        table = rng.normal(0.0, 1.0 / math.sqrt(D), size=(edges.size, D))
        return cls(edges, table)


@dataclass(frozen=True)
class AttentionConfig:
    D: int
    B: int = 10
    aggregation: str = "mean"
    scaled: bool = True

    def __post_init__(self):
        if self.D < 2 or self.D % 2:
            raise ValueError("D must be a positive even number")
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.aggregation not in ("mean", "max"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


def bin_value(x, edges) -> np.ndarray | int:
    """0 for x <= 0, else the 1-based bin [b_k, b_k+1) holding x, clamped to B.

    Positive values below the first edge fall in bin 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("measurement is not finite")
    edges = np.asarray(edges, dtype=np.float64)
    B = edges.size - 1
    idx = np.clip(np.searchsorted(edges, x, side="right"), 1, B)
    idx = np.where(x <= 0, 0, idx)
    return int(idx) if idx.ndim == 0 else idx


def contextual_embed(codebook: Codebook, x_row) -> np.ndarray:
    return codebook.table[bin_value(np.atleast_1d(x_row), codebook.edges)]


def fuse(v, phi) -> np.ndarray:
    return rotary.rotate(phi, v)


def softmax_rows(S: np.ndarray) -> np.ndarray:
    E = np.exp(S - S.max(axis=-1, keepdims=True))
    return E / E.sum(axis=-1, keepdims=True)


def attention_layer(embeddings, angles, W_q, W_k, W_v, scaled: bool = True):
    """Return (outputs M x D, attention matrix M x M).

    Positions enter queries and keys only; values are the unrotated
    projections.
    """
    V_in = np.asarray(embeddings, dtype=np.float64)
    phi = np.asarray(angles, dtype=np.float64)
    if V_in.ndim != 2 or phi.ndim != 2 or phi.shape[0] != V_in.shape[0]:
        raise ShapeError(f"embeddings {V_in.shape} and angles {phi.shape} disagree")
    for name, W in (("W_q", W_q), ("W_k", W_k), ("W_v", W_v)):
        if np.shape(W) != (V_in.shape[1], V_in.shape[1]):
            raise ShapeError(f"{name} must be {V_in.shape[1]}x{V_in.shape[1]}")
    Q = rotary.inject_query(V_in, phi, W_q)
    K = rotary.inject_key(V_in, phi, W_k)
    S = Q @ K.T
    if scaled:
        S = S / math.sqrt(V_in.shape[1])
    attn = softmax_rows(S)
    return attn @ (V_in @ np.asarray(W_v, dtype=np.float64).T), attn


def aggregate(outputs, mode: str = "mean") -> np.ndarray:
    H = np.asarray(outputs, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] == 0:
        raise ValueError("need at least one feature output")
    if mode == "mean":
        return H.mean(axis=0)
    if mode == "max":
        return H.max(axis=0)
    raise ValueError(f"unknown aggregation {mode!r}")


def init_projections(D: int, seed=0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Seeded N(0, 1/D) query, key and value matrices."""
    rng = make_rng(seed)
    return tuple(rng.normal(0.0, 1.0 / math.sqrt(D), size=(D, D)) for _ in range(3))
