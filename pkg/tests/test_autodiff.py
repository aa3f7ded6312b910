"""Reverse-mode engine checks against finite differences and hand math."""

import numpy as np
import pytest

from taeparse import autodiff as ad
from taeparse.autodiff import Tensor, grad_check


def _t(arr):
    return Tensor(np.asarray(arr, dtype=np.float64))


def test_add_mul_broadcast_gradients():
    a = _t(np.random.default_rng(0).normal(size=(3, 4)))
    b = _t(np.random.default_rng(1).normal(size=(4,)))

    def f():
        return ad.reduce_sum(ad.mul(ad.add(a, b), a))

    err = grad_check(f, [a, b], coords_per_param=8)
    assert err < 1e-7


def test_matmul_batched_gradients():
    a = _t(np.random.default_rng(2).normal(size=(2, 3, 4)))
    b = _t(np.random.default_rng(3).normal(size=(4, 5)))

    def f():
        return ad.reduce_sum(ad.matmul(a, b))

    assert grad_check(f, [a, b]) < 1e-7


def test_quadratic_gradient_is_exact():
    # d/dx sum(x*x) = 2x; float64 central differences resolve this to
    # near machine precision, the contract level for smooth fixtures
    x = _t(np.linspace(-2, 2, 12).reshape(3, 4))

    def f():
        return ad.reduce_sum(ad.mul(x, x))

    assert grad_check(f, [x]) < 1e-6


def test_composite_graph_gradient():
    rng = np.random.default_rng(5)
    table = _t(rng.normal(size=(9, 6)))
    w = _t(rng.normal(size=(6, 6)))
    ids = np.array([[1, 3, 3, 6]])  # duplicate row exercises accumulation

    def f():
        e = ad.embedding(table, ids)
        h = ad.relu(ad.matmul(e, w))
        h = ad.normalize(h)
        p = ad.softmax(h)
        return ad.reduce_sum(ad.log_clipped(p))

    assert grad_check(f, [table, w]) < 1e-3


def test_no_grad_blocks_gradients():
    x = _t([1.0, 2.0, 3.0])
    y = _t([2.0, 2.0, 2.0])
    with ad.Tape() as tape:
        with ad.no_grad():
            frozen = ad.mul(x, x)
        out = ad.reduce_sum(ad.mul(frozen, y))
        tape.backward(out)
    assert x.grad is None or not np.any(x.grad)
    np.testing.assert_allclose(y.grad, [1.0, 4.0, 9.0])


def test_frozen_argument_of_grad_check():
    a = _t([1.0, 2.0])
    b = _t([3.0, 4.0])

    def f():
        with ad.no_grad():
            c = ad.mul(a, a)
        return ad.reduce_sum(ad.mul(c, b))

    err = grad_check(f, [b], frozen=[a])
    assert err < 1e-9


def test_embedding_duplicate_rows_accumulate():
    table = _t(np.ones((5, 3)))
    ids = np.array([[2, 2, 4]])
    with ad.Tape() as tape:
        e = ad.embedding(table, ids)
        out = ad.reduce_sum(e)
        tape.backward(out)
    np.testing.assert_allclose(table.grad[2], [2, 2, 2])
    np.testing.assert_allclose(table.grad[4], [1, 1, 1])
    np.testing.assert_allclose(table.grad[0], 0)


def test_softmax_respects_mask():
    x = _t(np.zeros((1, 4)))
    mask = np.array([[0, 1, 0, 1]], dtype=np.uint8)
    with ad.Tape():
        p = ad.softmax(x, mask)
    np.testing.assert_allclose(p.data, [[0.5, 0.0, 0.5, 0.0]])


def test_dropout_scales_and_is_identity_at_eval():
    rng = np.random.default_rng(0)
    x = _t(np.ones((200, 50)))
    with ad.Tape():
        y = ad.dropout(x, 0.25, rng)
    kept = y.data[y.data != 0]
    np.testing.assert_allclose(kept, 1.0 / 0.75)
    frac = (y.data == 0).mean()
    assert abs(frac - 0.25) < 0.02


def test_log_clipped_floors_small_values():
    x = _t([1.0, 1e-30, 0.0])
    with ad.Tape():
        y = ad.log_clipped(x)
    np.testing.assert_allclose(y.data[0], 0.0, atol=1e-12)
    np.testing.assert_allclose(y.data[1:], np.log(1e-12))


def test_sigmoid_gradient():
    x = _t(np.linspace(-3, 3, 7))

    def f():
        return ad.reduce_sum(ad.sigmoid(x))

    assert grad_check(f, [x]) < 1e-8


def test_reshape_transpose_roundtrip_gradient():
    x = _t(np.random.default_rng(8).normal(size=(2, 3, 4)))

    def f():
        y = ad.transpose(x, (1, 0, 2))
        z = ad.reshape(y, (3, 8))
        return ad.reduce_sum(ad.mul(z, z))

    assert grad_check(f, [x]) < 1e-7


def test_gather_last_gradient_routes_to_picked_entries():
    x = _t(np.arange(12, dtype=np.float64).reshape(3, 4))
    idx = np.array([[1], [0], [3]])
    with ad.Tape() as tape:
        y = ad.gather_last(x, idx)
        tape.backward(ad.reduce_sum(y))
    want = np.zeros((3, 4))
    want[0, 1] = want[1, 0] = want[2, 3] = 1.0
    np.testing.assert_allclose(x.grad, want)


def test_tape_accumulates_over_reuse():
    x = _t([2.0])
    with ad.Tape() as tape:
        y = ad.add(x, x)             # dy/dx = 2
        tape.backward(ad.reduce_sum(y))
    np.testing.assert_allclose(x.grad, [2.0])


def test_grad_check_clears_stale_gradients():
    # running grad_check twice must not accumulate into a 2x error
    x = _t([1.0, -1.0, 0.5])

    def f():
        return ad.reduce_sum(ad.mul(x, x))

    first = grad_check(f, [x])
    second = grad_check(f, [x])
    assert first < 1e-6 and second < 1e-6
