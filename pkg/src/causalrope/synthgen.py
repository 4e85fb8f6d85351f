"""Ground-truth DAGs by preferential attachment and nonlinear SEM simulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import make_rng


class CyclicGraphError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedDag:
    """Adjacency with ``adjacency[i, j] != 0`` meaning edge i -> j."""

    adjacency: np.ndarray
    order: tuple[int, ...]

    @property
    def M(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.adjacency)
        return list(zip(rows.tolist(), cols.tolist()))

    def support(self) -> np.ndarray:
        return self.adjacency != 0


def topological_order(adjacency) -> tuple[int, ...] | None:
    """Kahn's algorithm over the support; ``None`` when a cycle exists."""
    B = np.asarray(adjacency) != 0
    M = B.shape[0]
    indeg = B.sum(axis=0).astype(int)
    ready = [j for j in range(M) if indeg[j] == 0]
    order = []
    while ready:
        i = ready.pop(0)
        order.append(i)
        for j in np.nonzero(B[i])[0]:
            indeg[j] -= 1
            if indeg[j] == 0:
                ready.append(int(j))
    return tuple(order) if len(order) == M else None


def gen_ba_dag(M: int, m_attach: int, seed) -> WeightedDag:
    """Barabasi-Albert attachment, each edge oriented from the older node to the newer.

    The first ``m_attach`` nodes start unconnected; node ``m_attach`` links to
    all of them and every later node picks ``m_attach`` distinct targets with
    probability proportional to current degree. Edges carry weight 1 until
    ``assign_weights`` is applied.
    """
    if M < 2 or not (1 <= m_attach < M):
        raise ValueError(f"need M >= 2 and 1 <= m_attach < M, got M={M}, m_attach={m_attach}")
    rng = make_rng(seed)
    A = np.zeros((M, M))
    targets = list(range(m_attach))
    stubs: list[int] = []
    for new in range(m_attach, M):
        for t in targets:
            A[t, new] = 1.0
        stubs.extend(targets)
        stubs.extend([new] * m_attach)
        chosen: set[int] = set()
        while len(chosen) < m_attach and new + 1 < M:
            chosen.add(stubs[int(rng.integers(len(stubs)))])
        targets = sorted(chosen)
    return WeightedDag(A, tuple(range(M)))


def assign_weights(dag: WeightedDag, lo: float = 0.5, hi: float = 2.0, seed=0) -> WeightedDag:
    """Edge weights uniform on [-hi, -lo] U [lo, hi]."""
    if lo <= 0 or hi < lo:
        raise ValueError(f"need 0 < lo <= hi, got lo={lo}, hi={hi}")
    rng = make_rng(seed)
    mask = dag.adjacency != 0
    n = int(mask.sum())
    mags = rng.uniform(lo, hi, size=n)
    signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    W = np.zeros_like(dag.adjacency)
    W[mask] = mags * signs
    return WeightedDag(W, dag.order)


def simulate_sem(dag: WeightedDag, N: int, hidden: int = 16, seed=0,
                 activation: str = "tanh", internal: str = "normal") -> np.ndarray:
    """Sample N rows of x_j = MLP_j(w_ij * x_i for parents i) + z_j, z_j ~ N(0, 1).

    Each non-root node owns a one-hidden-layer network without biases whose
    weights are N(0, 1) (``internal="normal"``) or all ones (``"unit"``).
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    A = np.asarray(dag.adjacency, dtype=np.float64)
    order = topological_order(A)
    if order is None:
        raise CyclicGraphError("simulate_sem needs an acyclic graph")
    act = {"tanh": np.tanh, "sigmoid": lambda z: 1.0 / (1.0 + np.exp(-z)),
           "identity": lambda z: z}[activation]
    rng = make_rng(seed)
    M = A.shape[0]
    X = np.zeros((N, M))
    noise = rng.standard_normal((N, M))
    for j in order:
        parents = np.nonzero(A[:, j])[0]
        if parents.size == 0:
            X[:, j] = noise[:, j]
            continue
        if internal == "unit":
            W1 = np.ones((parents.size, hidden))
            W2 = np.ones(hidden)
        else:
            W1 = rng.standard_normal((parents.size, hidden))
            W2 = rng.standard_normal(hidden)
        inputs = X[:, parents] * A[parents, j]
        X[:, j] = act(inputs @ W1) @ W2 + noise[:, j]
    return X


def make_replica(M: int = 10, m_attach: int = 2, N: int = 5000, seed=0, hidden: int = 16,
                 lo: float = 0.5, hi: float = 2.0) -> tuple[WeightedDag, np.ndarray]:
    """Weighted BA graph plus simulated data, each step on its own child stream of ``seed``."""
    dag = assign_weights(gen_ba_dag(M, m_attach, seed=(seed, 0)), lo, hi, seed=(seed, 1))
    return dag, simulate_sem(dag, N, hidden=hidden, seed=(seed, 2))
