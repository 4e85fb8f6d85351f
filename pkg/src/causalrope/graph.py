"""Thresholded causal graphs and structural comparison."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthgen import WeightedDag, topological_order


class ResidualCycleError(ValueError):
    def __init__(self, cycle: list[int]):
        self.cycle = cycle
        super().__init__("thresholded graph has a cycle: " + " -> ".join(map(str, cycle + cycle[:1])))


@dataclass(frozen=True)
class CausalGraph:
    adjacency: np.ndarray
    order: tuple[int, ...]

    @property
    def M(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        rows, cols = np.nonzero(self.adjacency)
        return [(int(i), int(j), float(self.adjacency[i, j])) for i, j in zip(rows, cols)]

    @classmethod
    def from_adjacency(cls, A) -> "CausalGraph":
        A = np.array(A, dtype=np.float64)
        order = topological_order(A)
        if order is None:
            raise ResidualCycleError(find_cycle(A))
        return cls(A, order)

    @classmethod
    def from_dag(cls, dag: WeightedDag) -> "CausalGraph":
        return cls.from_adjacency(dag.adjacency)


def find_cycle(A) -> list[int]:
    """One directed cycle in the support of A (empty list when acyclic)."""
    B = np.asarray(A) != 0
    M = B.shape[0]
    color = [0] * M
    stack: list[int] = []

    def visit(u: int) -> list[int] | None:
        color[u] = 1
        stack.append(u)
        for v in np.nonzero(B[u])[0]:
            v = int(v)
            if color[v] == 1:
                return stack[stack.index(v):]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        stack.pop()
        color[u] = 2
        return None

    for s in range(M):
        if color[s] == 0:
            found = visit(s)
            if found:
                return list(found)
    return []


def threshold_adjacency(A, tau: float) -> CausalGraph:
    """Keep entries with |A_ij| > tau; raise ResidualCycleError if a cycle survives."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    A = np.asarray(A, dtype=np.float64)
    return CausalGraph.from_adjacency(np.where(np.abs(A) > tau, A, 0.0))


def shd(estimate, truth) -> int:
    """Structural Hamming distance between two supports; a reversal costs one."""
    E = np.asarray(getattr(estimate, "adjacency", estimate)) != 0
    T = np.asarray(getattr(truth, "adjacency", truth)) != 0
    if E.shape != T.shape:
        raise ValueError(f"dimension mismatch: {E.shape} vs {T.shape}")
    np.fill_diagonal(E, False)
    np.fill_diagonal(T, False)
    und_e = E | E.T
    und_t = T | T.T
    # skeleton differences: insertions plus deletions, one per unordered pair
    diff = np.triu(und_e != und_t, 1).sum()
    # shared skeleton pairs with a different orientation pattern
    shared = np.triu(und_e & und_t, 1)
    i, j = np.nonzero(shared)
    reversed_ = int(np.sum((E[i, j] != T[i, j]) | (E[j, i] != T[j, i])))
    return int(diff) + reversed_
