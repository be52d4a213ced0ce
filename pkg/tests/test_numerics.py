import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import RandomProgram, central_diff, rel_err
from toydiff import numerics as nx


def test_forward_examples():
    assert np.array_equal(nx.add(np.array([1.0, 2.0]), np.array([3.0, 4.0])), [4.0, 6.0])
    assert nx.sq_l2(np.array([3.0, 4.0])) == 25.0
    A = np.random.default_rng(0).standard_normal((3, 5))
    assert np.array_equal(nx.matmul(np.eye(3), A), A)


def test_backward_examples():
    g = nx.Graph()
    x = g.leaf([1.0, 2.0])
    assert np.array_equal(g.backward(nx.sum_(nx.mul(x, x)))[x.id], [2.0, 4.0])

    k = np.array([0.3, -1.2, 2.0])
    g = nx.Graph()
    c = g.leaf(k)
    assert np.array_equal(g.backward(nx.sq_l2(nx.sub(c, k)))[c.id], np.zeros(3))


def test_taped_and_plain_forward_agree_bitwise():
    p = RandomProgram(3)
    g = nx.Graph()
    taped = p.run([g.leaf(v) for v in p.inputs])
    assert float(taped.value) == p.value(p.inputs)


@pytest.mark.parametrize("seed", range(100))
def test_random_graph_gradients(seed):
    p = RandomProgram(seed)
    for got, want in zip(p.gradients(), p.fd_gradients()):
        assert rel_err(got, want) < 1e-4


def test_backward_is_linear():
    rng = np.random.default_rng(7)
    x0 = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 2))
    a, b = 0.7, -2.3

    def f(x):
        return nx.sum_(nx.tanh(nx.matmul(x, w)))

    def h(x):
        return nx.sq_l2(nx.silu(x))

    grads = []
    for build in (f, h, lambda x: nx.add(nx.scale(f(x), a), nx.scale(h(x), b))):
        g = nx.Graph()
        x = g.leaf(x0)
        grads.append(g.backward(build(x))[x.id])
    np.testing.assert_allclose(grads[2], a * grads[0] + b * grads[1], atol=1e-10, rtol=0)


def test_unreached_leaf_gets_zero_gradient():
    g = nx.Graph()
    x, y = g.leaf([1.0, 2.0]), g.leaf([[5.0]])
    grads = g.backward(nx.sum_(x))
    assert np.array_equal(grads[y.id], np.zeros((1, 1)))


def test_backward_requires_scalar_loss():
    g = nx.Graph()
    x = g.leaf([1.0, 2.0])
    with pytest.raises(nx.ShapeError):
        g.backward(nx.mul(x, x))


def test_shape_errors_are_loud():
    with pytest.raises(nx.ShapeError):
        nx.add(np.ones(3), np.ones(4))
    with pytest.raises(nx.ShapeError):
        nx.mul(np.ones((2, 3)), np.ones(3))  # no row broadcasting
    with pytest.raises(nx.ShapeError):
        nx.matmul(np.ones((2, 3)), np.ones((2, 3)))
    # scalar-with-array is the one allowed broadcast
    assert np.array_equal(nx.add(np.ones(3), 2.0), np.full(3, 3.0))


def test_nonfinite_forward_raises():
    with pytest.raises(nx.NonFiniteError):
        nx.mul(np.array([1e200]), np.array([1e200]))


def test_arrays_are_read_only():
    a = nx.as_array([1.0, 2.0])
    with pytest.raises(ValueError):
        a[0] = 3.0


def test_finite_difference_examples():
    fd = nx.finite_difference(lambda x: float(np.sum(x * x)), np.array([1.0, 0.0]), 1e-5)
    np.testing.assert_allclose(fd, [2.0, 0.0], atol=1e-8)
    assert np.array_equal(nx.finite_difference(lambda x: 4.0, np.ones(3)), np.zeros(3))
    with pytest.raises(ValueError):
        nx.finite_difference(lambda x: 0.0, np.ones(2), h=0.0)


def test_finite_difference_matches_independent_oracle():
    rng = np.random.default_rng(11)
    w = rng.standard_normal((5, 3))

    def f(x):
        return float(np.sum(np.tanh(x @ w) ** 2))

    x = rng.standard_normal((2, 5))
    np.testing.assert_allclose(nx.finite_difference(f, x), central_diff(f, x), atol=1e-12)


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (2, 4), elements=finite))
def test_matmul_gradient_property(a, b):
    g = nx.Graph()
    an, bn = g.leaf(a), g.leaf(b)
    grads = g.backward(nx.sum_(nx.matmul(an, bn)))
    # d/dA sum(AB) = 1 B^T, d/dB = A^T 1
    np.testing.assert_allclose(grads[an.id], np.ones((3, 4)) @ b.T, atol=1e-12)
    np.testing.assert_allclose(grads[bn.id], a.T @ np.ones((3, 4)), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (6,), elements=st.floats(-30, 30, allow_nan=False)))
def test_silu_gradient_property(x):
    g = nx.Graph()
    xn = g.leaf(x)
    got = g.backward(nx.sum_(nx.silu(xn)))[xn.id]
    sig = 1 / (1 + np.exp(-x))
    np.testing.assert_allclose(got, sig * (1 + x * (1 - sig)), rtol=1e-12, atol=1e-12)
