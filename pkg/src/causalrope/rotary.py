"""Rotary encodings from Poincare-ball positions.

Angles are ``(pi/4) * e``. A D-vector is rotated pairwise: coordinates
(2t, 2t+1) (zero-based) turn by angle t. The rotation matrix is never
built; ``rotate`` uses the element-wise cos/sin form.
"""

from __future__ import annotations

import math

import numpy as np

ANGLE_SCALE = math.pi / 4


class RotaryShapeError(ValueError):
    pass


def angles_from_poincare(e, scale: float = ANGLE_SCALE) -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if np.any(np.sum(e * e, axis=-1) >= 1.0):
        raise ValueError("encoding lies on or outside the unit ball")
    return scale * e


def _check_pair(phi: np.ndarray, x: np.ndarray) -> None:
    if x.shape[-1] % 2:
        raise RotaryShapeError(f"rotary width must be even, got {x.shape[-1]}")
    if phi.shape[-1] * 2 != x.shape[-1]:
        raise RotaryShapeError(f"{phi.shape[-1]} angles cannot rotate width {x.shape[-1]}")


def rotate(phi, x) -> np.ndarray:
    """R(phi) x via cos(phi) * x + sin(phi) * (-x_odd, x_even) interleaved."""
    phi = np.asarray(phi, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _check_pair(phi, x)
    c = np.repeat(np.cos(phi), 2, axis=-1)
    s = np.repeat(np.sin(phi), 2, axis=-1)
    swapped = np.empty(np.broadcast_shapes(x.shape, c.shape))
    swapped[..., 0::2] = -x[..., 1::2]
    swapped[..., 1::2] = x[..., 0::2]
    return c * x + s * swapped


def inject_query(v, phi, W_q) -> np.ndarray:
    return rotate(phi, _project(W_q, v))


def inject_key(v, phi, W_k) -> np.ndarray:
    return rotate(phi, _project(W_k, v))


def _project(W, v) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != v.shape[-1]:
        raise RotaryShapeError(f"projection {W.shape} does not match vector width {v.shape[-1]}")
    return v @ W.T


def attention_score(q, k, phi_m, phi_n) -> np.ndarray:
    """q^T R(phi_n - phi_m) k; broadcasts over leading axes."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1]:
        raise RotaryShapeError("query and key widths differ")
    delta = np.asarray(phi_n, dtype=np.float64) - np.asarray(phi_m, dtype=np.float64)
    return np.sum(q * rotate(delta, k), axis=-1)


def pair_coefficients(q, k) -> tuple[np.ndarray, np.ndarray]:
    """Per-pair alpha (aligned product) and beta (cross product) terms."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape[-1] != k.shape[-1] or q.shape[-1] % 2:
        raise RotaryShapeError("query/key widths must match and be even")
    q1, q2 = q[..., 0::2], q[..., 1::2]
    k1, k2 = k[..., 0::2], k[..., 1::2]
    return q1 * k1 + q2 * k2, q2 * k1 - q1 * k2


def upper_bound_from_gap(q, k, angle_gap) -> np.ndarray:
    """A+ given the Euclidean norm of the angle difference."""
    alpha, beta = pair_coefficients(q, k)
    d = alpha.shape[-1]
    return (d * np.abs(alpha).max(axis=-1) * np.cos(np.asarray(angle_gap) / d)
            + np.abs(beta).sum(axis=-1))


def score_bounds(q, k, phi_m, phi_n) -> tuple[np.ndarray, np.ndarray]:
    """(A-, A+) sandwiching ``attention_score``."""
    phi_m = np.asarray(phi_m, dtype=np.float64)
    phi_n = np.asarray(phi_n, dtype=np.float64)
    _check_pair(phi_m, np.asarray(q))
    gap = np.linalg.norm(phi_m - phi_n, axis=-1)
    upper = upper_bound_from_gap(q, k, gap)
    return -upper, upper


def generality_limit(q, k, poincare_distance: float) -> float:
    """Constant that A+ approaches as one endpoint's generality goes to 1."""
    if poincare_distance < 0:
        raise ValueError("distance must be non-negative")
    alpha, beta = pair_coefficients(q, k)
    d = alpha.shape[-1]
    # C / (C + 1) with C = (cosh(d) - 1) / 2 equals tanh(d / 2)^2 and cannot overflow
    ratio = math.tanh(0.5 * poincare_distance) ** 2
    return float(d * np.abs(alpha).max() * math.cos(math.pi / (4 * d) * math.sqrt(ratio))
                 + np.abs(beta).sum())
