"""Hyperboloid and Poincare-ball geometry (curvature -1).

Points are plain arrays; the last axis holds coordinates so every function
also accepts stacks of points. Hyperboloid points are (d+1)-vectors with the
time-like coordinate first.
"""

from __future__ import annotations

import numpy as np

ARCOSH_TOL = 1e-12
EXP_ZERO = 1e-12
ON_MANIFOLD_TOL = 1e-6


class ManifoldError(ValueError):
    pass


def origin(d: int) -> np.ndarray:
    p = np.zeros(d + 1)
    p[0] = 1.0
    return p


def minkowski_inner(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape[-1] != q.shape[-1] or p.shape[-1] < 2:
        raise ManifoldError(f"dimension mismatch: {p.shape} vs {q.shape}")
    return -p[..., 0] * q[..., 0] + np.sum(p[..., 1:] * q[..., 1:], axis=-1)


def _arcosh(x):
    x = np.asarray(x, dtype=np.float64)
    return np.arccosh(np.maximum(x, 1.0))


def check_hyperboloid(p, tol: float = ON_MANIFOLD_TOL) -> None:
    p = np.asarray(p, dtype=np.float64)
    if np.any(np.abs(minkowski_inner(p, p) + 1.0) > tol) or np.any(p[..., 0] <= 0):
        raise ManifoldError("point is not on the upper hyperboloid sheet")


def lift(spatial) -> np.ndarray:
    """Complete p0 = sqrt(1 + |p~|^2) for given spatial coordinates."""
    s = np.asarray(spatial, dtype=np.float64)
    p0 = np.sqrt(1.0 + np.sum(s * s, axis=-1, keepdims=True))
    return np.concatenate([p0, s], axis=-1)


def dist_hyperboloid(p, q, check: bool = True) -> np.ndarray:
    if check:
        check_hyperboloid(p)
        check_hyperboloid(q)
    return _arcosh(-minkowski_inner(p, q))


def project_tangent(p, u) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if p.shape[-1] != u.shape[-1]:
        raise ManifoldError("dimension mismatch")
    return u + minkowski_inner(p, u)[..., None] * p


def minkowski_norm(v) -> np.ndarray:
    return np.sqrt(np.maximum(minkowski_inner(v, v), 0.0))


def exp_map(p, v, tol: float = 1e-6) -> np.ndarray:
    """Move from p along the geodesic with initial velocity v for length |v|_l."""
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    scale = 1.0 + np.linalg.norm(p) * np.linalg.norm(v)
    if np.any(np.abs(minkowski_inner(p, v)) > tol * scale):
        raise ManifoldError("v is not tangent at p")
    n = minkowski_norm(v)[..., None]
    small = n < EXP_ZERO
    safe = np.where(small, 1.0, n)
    out = np.cosh(n) * p + np.sinh(n) * v / safe
    return np.where(small, p, out)


def euclid_to_riemannian_grad(g) -> np.ndarray:
    g = np.array(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ManifoldError("non-finite gradient")
    g[..., 0] = -g[..., 0]
    return g


def renormalize(p) -> np.ndarray:
    return lift(np.asarray(p, dtype=np.float64)[..., 1:])


def rsgd_step(p, euclid_grad, lr: float) -> np.ndarray:
    """One Riemannian SGD step followed by time-coordinate renormalization."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    g = euclid_to_riemannian_grad(euclid_grad)
    tangent = project_tangent(p, g)
    return renormalize(exp_map(p, -lr * tangent))


def to_poincare(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p[..., 1:] / (p[..., :1] + 1.0)


def from_poincare(e) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    sq = np.sum(e * e, axis=-1, keepdims=True)
    if np.any(sq >= 1.0):
        raise ManifoldError("point lies on or outside the unit ball")
    return np.concatenate([1.0 + sq, 2.0 * e], axis=-1) / (1.0 - sq)


def dist_poincare(e1, e2) -> np.ndarray:
    e1 = np.asarray(e1, dtype=np.float64)
    e2 = np.asarray(e2, dtype=np.float64)
    n1 = np.sum(e1 * e1, axis=-1)
    n2 = np.sum(e2 * e2, axis=-1)
    if np.any(n1 >= 1.0) or np.any(n2 >= 1.0):
        raise ManifoldError("point lies on or outside the unit ball")
    diff = np.sum((e1 - e2) ** 2, axis=-1)
    return _arcosh(1.0 + 2.0 * diff / ((1.0 - n1) * (1.0 - n2)))


def specificity(p) -> np.ndarray:
    """Distance to the hyperboloid origin, arcosh(p0)."""
    return _arcosh(np.asarray(p, dtype=np.float64)[..., 0])
