"""Shared numerical kernels: matrix exponential, finite-difference gradient
checks, a small multilayer perceptron with manual backprop, seeded RNGs and
CSV persistence of dense matrices.

Dense matrices are plain float64 ``numpy.ndarray`` objects; ``as_matrix``
validates shape and finiteness at module boundaries.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

TAYLOR_DEGREE = 8
# squaring threshold keeps the degree-8 Taylor remainder near 1e-14 relative
_SCALE_TARGET = 0.125


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def as_matrix(a, *, square: bool = False, name: str = "matrix") -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if square and m.shape[0] != m.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError(f"{name} has non-finite entries")
    return m


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator; a tuple seed derives an independent child stream."""
    return np.random.Generator(np.random.PCG64(seed))


def mat_exp(S) -> np.ndarray:
    """Matrix exponential by scaling and squaring around a degree-8 Taylor core."""
    S = as_matrix(S, square=True, name="S")
    n = S.shape[0]
    norm = np.linalg.norm(S, 1) if n else 0.0
    s = 0
    if norm > _SCALE_TARGET:
        s = int(math.ceil(math.log2(norm / _SCALE_TARGET)))
    T = S / (2.0 ** s)
    # Horner evaluation of sum_{k<=8} T^k / k!
    E = np.eye(n)
    for k in range(TAYLOR_DEGREE, 0, -1):
        E = np.eye(n) + (T @ E) / k
    for _ in range(s):
        E = E @ E
    return E


def fd_gradient(f: Callable[[np.ndarray], float], x, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = float(f(x))
        flat[i] = old - eps
        fm = float(f(x))
        flat[i] = old
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError(f"function is non-finite near component {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return g


def fd_gradient_check(f, grad, x, eps: float = 1e-6) -> float:
    """Max relative error between an analytic gradient and central differences.

    ``grad`` is either the analytic gradient array at ``x`` or a callable
    returning it. The error per component is |a - n| / (|a| + 1e-12).
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad(x) if callable(grad) else grad, dtype=np.float64)
    numeric = fd_gradient(f, x, eps)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)
    return float(err.max()) if err.size else 0.0


def _tanh_grad(y: np.ndarray) -> np.ndarray:
    d = y * y
    return np.subtract(1.0, d, out=d)


_ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "sigmoid": (lambda z: 0.5 * (1.0 + np.tanh(0.5 * z)), lambda y: y * (1.0 - y)),
    "identity": (lambda z: z, lambda y: np.ones_like(y)),
}


def _apply(act: str, z: np.ndarray) -> np.ndarray:
    """Activation applied in place on a freshly allocated pre-activation."""
    if act == "tanh":
        return np.tanh(z, out=z)
    return _ACTIVATIONS[act][0](z)


@dataclass
class Mlp:
    """Fully connected network; hidden layers use ``activation``, output is linear.

    ``weights[i]`` has shape (widths[i], widths[i+1]) so a batch ``x`` of
    shape (n, widths[0]) maps as ``x @ W + b``.
    """

    widths: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("layer count mismatch")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[i], self.widths[i + 1]) or b.shape != (self.widths[i + 1],):
                raise ShapeError(f"layer {i} has incompatible shapes {W.shape}, {b.shape}")
        if self.activation not in _ACTIVATIONS or self.output_activation not in _ACTIVATIONS:
            raise ValueError("unknown activation")

    @classmethod
    def init(cls, widths: Sequence[int], rng: np.random.Generator, activation: str = "tanh",
             scale: str | float = "glorot", output_activation: str = "identity") -> "Mlp":
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            std = math.sqrt(2.0 / (fan_in + fan_out)) if scale == "glorot" else float(scale)
            weights.append(rng.normal(0.0, std, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(widths), weights, biases, activation, output_activation)

    @classmethod
    def zeros(cls, widths: Sequence[int], activation: str = "tanh") -> "Mlp":
        return cls(tuple(widths),
                   [np.zeros((a, b)) for a, b in zip(widths[:-1], widths[1:])],
                   [np.zeros(b) for b in widths[1:]], activation)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.widths, [W.copy() for W in self.weights],
                   [b.copy() for b in self.biases], self.activation, self.output_activation)

    def forward(self, x: np.ndarray, cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ShapeError(f"expected batch with {self.widths[0]} columns, got {x.shape}")
        acts = [x]
        n_layers = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            act = self.activation if i < n_layers - 1 else self.output_activation
            z = acts[-1] @ W
            z += b
            acts.append(_apply(act, z))
        return (acts[-1], acts) if cache else acts[-1]

    def backward(self, acts: list[np.ndarray], upstream: np.ndarray):
        """Return (parameter grads in ``params`` order, grad wrt input)."""
        n_layers = len(self.weights)
        g = np.asarray(upstream, dtype=np.float64)
        grads: list[np.ndarray] = [None] * (2 * n_layers)  # type: ignore[list-item]
        for i in range(n_layers - 1, -1, -1):
            act = self.activation if i < n_layers - 1 else self.output_activation
            if act != "identity":
                d = _ACTIVATIONS[act][1](acts[i + 1])
                d *= g
                g = d
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return grads, g


def write_csv(path, a, header: Sequence[str] | None = None) -> None:
    """Write a matrix (or vector, as one column) with shortest round-trip decimals."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    Path(path).write_text(matrix_to_csv(a, header), encoding="utf-8")


def matrix_to_csv(a: np.ndarray, header: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    if header is not None:
        buf.write(",".join(header) + "\n")
    for row in np.asarray(a, dtype=np.float64):
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def read_csv(path, header: bool | None = None) -> np.ndarray:
    """Read a numeric CSV. ``header=None`` sniffs a non-numeric first line."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if header is None and lines:
        try:
            [float(v) for v in lines[0].split(",")]
            header = False
        except ValueError:
            header = True
    if header:
        lines = lines[1:]
    rows = [[float(v) for v in ln.split(",")] for ln in lines]
    if rows and len({len(r) for r in rows}) != 1:
        raise ShapeError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(rows[0]) if rows else 0)
