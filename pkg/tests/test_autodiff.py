"""Finite-difference checks for every op in the autodiff engine."""

import numpy as np
import pytest

from tcpgen import autodiff as ad
from tcpgen.autodiff import Tensor
from tcpgen.rng import Stream

FD_STEP = 1e-6
FD_TOL = 1e-6


def fd_check(build, leaves, stream, tol=FD_TOL):
    """Compare analytic grads of scalar build(*leaves) with central FD."""
    out = build(*leaves)
    assert out.data.shape == ()
    out.backward()
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + FD_STEP
            hi = build(*leaves).data
            flat[k] = orig - FD_STEP
            lo = build(*leaves).data
            flat[k] = orig
            num = (hi - lo) / (2 * FD_STEP)
            got = analytic.reshape(-1)[k]
            assert got == pytest.approx(num, rel=tol, abs=tol), \
                f"leaf grad[{k}]: analytic {got} vs fd {num}"
        leaf.zero_grad()


def leaf(stream, shape, scale=1.0):
    return ad.parameter(stream.gauss_array(shape, scale=scale))


def test_add_mul_broadcast():
    s = Stream(1)
    a, b, c = leaf(s, (3, 4)), leaf(s, (4,)), leaf(s, ())
    fd_check(lambda a, b, c: ad.tsum((a + b) * c), [a, b, c], s)


def test_matmul_all_rank_combos():
    s = Stream(2)
    m, n, k = 3, 4, 2
    A, B = leaf(s, (m, n)), leaf(s, (n, k))
    fd_check(lambda A, B: ad.tsum(A @ B), [A, B], s)
    A, v = leaf(s, (m, n)), leaf(s, (n,))
    fd_check(lambda A, v: ad.tsum(A @ v), [A, v], s)
    u, B = leaf(s, (n,)), leaf(s, (n, k))
    fd_check(lambda u, B: ad.tsum(u @ B), [u, B], s)
    u, v = leaf(s, (n,)), leaf(s, (n,))
    fd_check(lambda u, v: u @ v, [u, v], s)


def test_nonlinearities():
    s = Stream(3)
    x = leaf(s, (5,))
    fd_check(lambda x: ad.tsum(ad.tanh(x)), [x], s)
    fd_check(lambda x: ad.tsum(ad.sigmoid(x)), [x], s)
    fd_check(lambda x: ad.tsum(ad.exp(x)), [x], s)
    y = ad.parameter(np.abs(Stream(4).gauss_array((5,))) + 0.5)
    fd_check(lambda y: ad.tsum(ad.log(y)), [y], s)


def test_softmax_and_log_softmax():
    s = Stream(5)
    x = leaf(s, (6,))
    w = Stream(6).gauss_array((6,))
    fd_check(lambda x: ad.tsum(ad.softmax(x) * w), [x], s)
    fd_check(lambda x: ad.tsum(ad.log_softmax(x) * w), [x], s)
    m = leaf(s, (3, 4))
    wm = Stream(7).gauss_array((3, 4))
    fd_check(lambda m: ad.tsum(ad.softmax(m, axis=-1) * wm), [m], s)


def test_concat_stack_vstack_slices():
    s = Stream(8)
    a, b = leaf(s, (3,)), leaf(s, (2,))
    w = Stream(9).gauss_array((5,))
    fd_check(lambda a, b: ad.tsum(ad.concat([a, b]) * w), [a, b], s)
    m = leaf(s, (4, 3))
    w2 = Stream(10).gauss_array((2, 3))
    fd_check(lambda m: ad.tsum(ad.take_rows(m, [1, 3]) * w2), [m], s)
    fd_check(lambda m: ad.tsum(ad.row(m, 2)), [m], s)
    fd_check(lambda m: ad.tsum(ad.col(m, 1)), [m], s)
    fd_check(lambda m: ad.tsum(ad.cols(m, 0, 2)), [m], s)
    v = leaf(s, (6,))
    fd_check(lambda v: ad.tsum(ad.slice1d(v, 1, 4)), [v], s)
    r1, r2 = leaf(s, (3,)), leaf(s, (2, 3))
    fd_check(lambda r1, r2: ad.tsum(ad.vstack([r1, r2])), [r1, r2], s)
    fd_check(lambda m: ad.tsum(ad.transpose(m) @ leaf(Stream(11), (4,))), [m], s)
    fd_check(lambda v: ad.tsum(ad.reshape(v, (2, 3))), [v], s)


def test_take_rows_repeated_indices_accumulate():
    m = ad.parameter(np.arange(6.0).reshape(3, 2))
    out = ad.tsum(ad.take_rows(m, [1, 1, 2]))
    out.backward()
    assert np.array_equal(m.grad, [[0, 0], [2, 2], [1, 1]])


def test_scatter_exact_zeros_and_grad():
    s = Stream(12)
    v = leaf(s, (3,))
    out = ad.scatter(v, [0, 2, 5], 7)
    assert out.data[1] == 0.0 and out.data[3] == 0.0
    w = Stream(13).gauss_array((7,))
    fd_check(lambda v: ad.tsum(ad.scatter(v, [0, 2, 5], 7) * w), [v], s)
    m = leaf(s, (2, 3))
    w2 = Stream(14).gauss_array((2, 7))
    fd_check(lambda m: ad.tsum(ad.scatter(m, [1, 4, 6], 7) * w2), [m], s)


def test_element_and_clip():
    s = Stream(15)
    m = leaf(s, (3, 4))
    fd_check(lambda m: ad.element(m, (1, 2)), [m], s)
    x = ad.parameter(np.array([-2.0, -0.5, 0.5, 2.0]))
    out = ad.tsum(ad.clip(x, -1.0, 1.0))
    out.backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 1.0, 0.0])


def test_diamond_graph_accumulates():
    x = ad.parameter(np.array(2.0))
    y = x * x + x * 3.0    # dy/dx = 2x + 3 = 7
    y.backward()
    assert x.grad == pytest.approx(7.0)


def test_no_grad_blocks_recording():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = ad.tsum(x * 2.0)
    assert y._backward is None and not y.requires_grad


def test_constant_subgraphs_not_recorded():
    a = Tensor(np.ones(3))
    b = Tensor(np.ones(3))
    c = a + b
    assert c._backward is None


def test_custom_op_injects_gradient():
    x = ad.parameter(np.array([1.0, 2.0]))
    y = ad.custom(5.0, (x,), (lambda g: g * np.array([10.0, 20.0]),))
    y.backward()
    assert np.array_equal(x.grad, [10.0, 20.0])
