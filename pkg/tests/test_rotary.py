import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causalrope import rotary
from causalrope.numerics import make_rng

R8 = math.cos(math.pi / 4)


def _draw(seed, d=64):
    rng = make_rng(seed)
    return (rng.normal(size=2 * d), rng.normal(size=2 * d),
            rng.uniform(-math.pi / 4, math.pi / 4, d), rng.uniform(-math.pi / 4, math.pi / 4, d))


def test_angle_scaling():
    assert np.array_equal(rotary.angles_from_poincare(np.zeros(3)), np.zeros(3))
    assert rotary.angles_from_poincare([0.5, 0.0]) == pytest.approx([0.39269908169872414, 0.0], abs=1e-15)
    phi = rotary.angles_from_poincare(0.999 * np.array([0.8, -0.6]))
    assert np.all(np.abs(phi) < math.pi / 4)
    with pytest.raises(ValueError):
        rotary.angles_from_poincare([0.8, 0.6])


def test_rotate_examples():
    x = np.arange(6.0)
    assert np.array_equal(rotary.rotate(np.zeros(3), x), x)
    assert rotary.rotate([math.pi / 4], [1.0, 0.0]) == pytest.approx([R8, R8], abs=1e-15)
    with pytest.raises(rotary.RotaryShapeError):
        rotary.rotate([0.1], [1.0, 0.0, 0.0])
    with pytest.raises(rotary.RotaryShapeError):
        rotary.rotate([0.1, 0.2], [1.0, 0.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_rotation_is_an_invertible_isometry(seed):
    q, _, phi, psi = _draw(seed, 8)
    y = rotary.rotate(phi, q)
    assert np.linalg.norm(y) == pytest.approx(np.linalg.norm(q), abs=1e-12)
    assert np.allclose(rotary.rotate(-phi, y), q, atol=1e-12)
    # R(phi)^T R(psi) = R(psi - phi)
    assert np.allclose(rotary.rotate(-phi, rotary.rotate(psi, q)), rotary.rotate(psi - phi, q), atol=1e-12)


def test_injection_with_identity_projection():
    v = np.array([1.0, 2.0, -1.0, 0.5])
    assert np.allclose(rotary.inject_query(v, np.zeros(2), np.eye(4)), v)
    assert np.linalg.norm(rotary.inject_key(v, [0.3, -0.2], np.eye(4))) == pytest.approx(np.linalg.norm(v))
    with pytest.raises(rotary.RotaryShapeError):
        rotary.inject_query(v, np.zeros(2), np.eye(3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_injected_product_is_relative(seed):
    rng = make_rng(seed)
    vm, vn, pm, pn = _draw(seed, 8)
    Wq, Wk = rng.normal(size=(2, 16, 16))
    lhs = rotary.inject_query(vm, pm, Wq) @ rotary.inject_key(vn, pn, Wk)
    assert lhs == pytest.approx(rotary.attention_score(Wq @ vm, Wk @ vn, pm, pn), abs=1e-10)


def test_score_examples():
    q, k, pm, _ = _draw(1, 4)
    assert rotary.attention_score(q, k, pm, pm) == pytest.approx(q @ k, abs=1e-12)
    assert rotary.attention_score([1.0, 0.0], [1.0, 0.0], [0.0], [math.pi / 4]) == pytest.approx(R8, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32), st.floats(-1, 1))
def test_score_is_shift_invariant(seed, delta):
    q, k, pm, pn = _draw(seed, 8)
    assert rotary.attention_score(q, k, pm + delta, pn + delta) == pytest.approx(
        rotary.attention_score(q, k, pm, pn), abs=1e-12)


def test_bounds_examples():
    lo, hi = rotary.score_bounds([1.0, 0.0], [1.0, 0.0], [0.0], [math.pi / 4])
    assert hi == pytest.approx(R8, abs=1e-15) and lo == -hi
    lo, hi = rotary.score_bounds([1.0, 0.0, 0.0, 0.0], np.zeros(4), [0.1, 0.2], [0.3, 0.0])
    assert lo == hi == 0.0


def test_bounds_sandwich_score_on_random_draws():
    rng = make_rng(11)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        q, k = rng.normal(size=(2, 2 * d))
        pm, pn = rng.uniform(-math.pi / 4, math.pi / 4, (2, d))
        lo, hi = rotary.score_bounds(q, k, pm, pn)
        s = rotary.attention_score(q, k, pm, pn)
        assert lo - 1e-9 <= s <= hi + 1e-9


def test_generality_limit_endpoints():
    q, k, _, _ = _draw(3, 4)
    alpha, beta = rotary.pair_coefficients(q, k)
    d = alpha.size
    assert rotary.generality_limit(q, k, 0.0) == pytest.approx(d * np.abs(alpha).max() + np.abs(beta).sum())
    far = d * np.abs(alpha).max() * math.cos(math.pi / (4 * d)) + np.abs(beta).sum()
    assert rotary.generality_limit(q, k, 60.0) == pytest.approx(far, rel=1e-12)
    assert rotary.generality_limit(q, k, 1e6) == pytest.approx(far, rel=1e-12)
    with pytest.raises(ValueError):
        rotary.generality_limit(q, k, -0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_generality_limit_decreases_with_distance(seed):
    q, k, _, _ = _draw(seed, 4)
    assert rotary.generality_limit(q, k, 1.0) >= rotary.generality_limit(q, k, 3.0)
