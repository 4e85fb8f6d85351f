import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causalrope.numerics import (Mlp, NonFiniteError, ShapeError, fd_gradient, fd_gradient_check,
                                 make_rng, mat_exp, read_csv, write_csv)


def test_mat_exp_zero_is_identity():
    assert np.array_equal(mat_exp(np.zeros((4, 4))), np.eye(4))


def test_mat_exp_swap_trace():
    # eigenvalues +-1, so the trace is 2 cosh(1)
    assert np.trace(mat_exp([[0.0, 1.0], [1.0, 0.0]])) == pytest.approx(3.0861612696304874, abs=1e-12)


def test_mat_exp_nilpotent_series_is_exact():
    S = np.array([[0.0, 2.0, -1.0], [0.0, 0.0, 3.0], [0.0, 0.0, 0.0]])
    assert np.allclose(mat_exp(S), np.eye(3) + S + S @ S / 2, atol=1e-14, rtol=0)


def test_mat_exp_rejects_bad_input():
    with pytest.raises(ShapeError):
        mat_exp(np.zeros((2, 3)))
    with pytest.raises(NonFiniteError):
        mat_exp([[np.nan, 0.0], [0.0, 0.0]])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-2, 2)))
def test_mat_exp_agrees_with_scipy(S):
    from scipy.linalg import expm
    ref = expm(S)
    assert np.allclose(mat_exp(S), ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-1, 1)), st.floats(-1, 1), st.floats(-1, 1))
def test_mat_exp_commuting_product(S, a, b):
    assert np.allclose(mat_exp(a * S) @ mat_exp(b * S), mat_exp((a + b) * S), atol=1e-10)


def test_fd_gradient_quadratic():
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([0.3, -1.2])
    assert np.allclose(fd_gradient(lambda v: 0.5 * v @ Q @ v, x), Q @ x, atol=1e-8)


def test_fd_gradient_check_flags_wrong_gradient():
    x = np.array([1.0, 2.0])
    assert fd_gradient_check(lambda v: float(v @ v), lambda v: 2 * v, x) < 1e-8
    assert fd_gradient_check(lambda v: float(v @ v), lambda v: v, x) > 0.4


def _mlp_loss_and_grads(net, x, y):
    out, acts = net.forward(x, cache=True)
    resid = out - y
    grads, _ = net.backward(acts, resid)
    return 0.5 * float(np.sum(resid ** 2)), grads


def test_mlp_backward_matches_finite_differences():
    rng = make_rng(3)
    net = Mlp.init((1, 64, 1), rng)
    x = rng.normal(size=(20, 1))
    y = np.sin(x)
    _, grads = _mlp_loss_and_grads(net, x, y)
    for p, g in zip(net.params, grads):
        def f(v, p=p):
            old = p.copy()
            p[...] = v
            val = _mlp_loss_and_grads(net, x, y)[0]
            p[...] = old
            return val
        assert fd_gradient_check(f, lambda v, g=g: g, p.copy(), eps=1e-5) < 1e-4


def test_mlp_rejects_mismatched_layers():
    with pytest.raises(ShapeError):
        Mlp((2, 3), [np.zeros((3, 2))], [np.zeros(3)])


def test_make_rng_is_reproducible_and_stream_separated():
    assert make_rng((5, 1)).random() == make_rng((5, 1)).random()
    assert make_rng((5, 1)).random() != make_rng((5, 2)).random()


def test_csv_round_trip_is_exact(tmp_path):
    a = make_rng(0).normal(size=(4, 3)) * 1e-7
    write_csv(tmp_path / "a.csv", a)
    assert np.array_equal(read_csv(tmp_path / "a.csv"), a)
