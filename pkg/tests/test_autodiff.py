"""Tape operations against numpy closed forms and central finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from regenedit import autodiff as ad
from regenedit.errors import ParameterError
from regenedit.rng import SeededRng


def _rand(shape, seed, scale=1.0):
    return (SeededRng(seed).normal(shape) * np.float32(scale)).astype(np.float32)


def test_values_match_numpy():
    a = _rand((3, 4), 1)
    b = _rand((3, 4), 2)
    np.testing.assert_allclose(ad.add(ad.constant(a), ad.constant(b)).value, a + b)
    np.testing.assert_allclose(ad.sub(ad.constant(a), ad.constant(b)).value, a - b)
    np.testing.assert_allclose(ad.mul(ad.constant(a), ad.constant(b)).value, a * b)
    np.testing.assert_allclose(
        ad.div(ad.constant(a), ad.constant(np.abs(b) + 1.0)).value,
        a / (np.abs(b) + 1.0),
        rtol=1e-6,
    )
    np.testing.assert_allclose(ad.square(ad.constant(a)).value, a * a)
    np.testing.assert_allclose(
        ad.sqrt(ad.constant(np.abs(a) + 0.5)).value,
        np.sqrt(np.abs(a) + 0.5),
        rtol=1e-6,
    )
    np.testing.assert_allclose(
        ad.exp(ad.constant(a)).value, np.exp(a), rtol=1e-6
    )
    np.testing.assert_allclose(
        ad.log(ad.constant(np.abs(a) + 0.5)).value,
        np.log(np.abs(a) + 0.5),
        rtol=1e-6,
    )
    sig = 1.0 / (1.0 + np.exp(-a.astype(np.float64)))
    np.testing.assert_allclose(
        ad.silu(ad.constant(a)).value, a * sig, rtol=1e-5
    )


def test_reduction_values():
    a = _rand((5, 3), 3)
    assert ad.sum_all(ad.constant(a)).value == pytest.approx(float(a.sum()), rel=1e-6)
    assert ad.mean_all(ad.constant(a)).value == pytest.approx(float(a.mean()), rel=1e-6)
    np.testing.assert_allclose(
        ad.mean_axis(ad.constant(a), 0).value, a.mean(axis=0, keepdims=True), rtol=1e-6
    )
    assert ad.frob_norm(ad.constant(a)).value == pytest.approx(
        float(np.sqrt((a.astype(np.float64) ** 2).sum())), rel=1e-6
    )


def test_structural_values():
    a = _rand((2, 6), 4)
    np.testing.assert_array_equal(ad.reshape(ad.constant(a), (3, 4)).value, a.reshape(3, 4))
    np.testing.assert_array_equal(ad.transpose2d(ad.constant(a)).value, a.T)
    np.testing.assert_array_equal(ad.roll(ad.constant(a), 2, 1).value, np.roll(a, 2, axis=1))
    b = _rand((6, 3), 5)
    np.testing.assert_allclose(
        ad.matmul(ad.constant(a), ad.constant(b)).value, a @ b, rtol=1e-5
    )


def test_softmax_rows_matches_naive():
    m = _rand((7, 5), 6, scale=2.0)
    got = ad.softmax_rows(m)
    naive = np.zeros_like(m, dtype=np.float64)
    for i in range(m.shape[0]):
        e = np.exp(m[i].astype(np.float64) - m[i].max())
        naive[i] = e / e.sum()
    np.testing.assert_allclose(got, naive, atol=1e-6)
    np.testing.assert_allclose(got.sum(axis=1), 1.0, atol=1e-6)


def test_avg_pool_matches_window_mean():
    m = _rand((6, 6, 2), 7)
    got = ad.avg_pool2(m)
    want = m.reshape(3, 2, 3, 2, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(got, want, rtol=1e-6)


def test_conv3x3_matches_loop_oracle():
    x = _rand((5, 5, 2), 8)
    w = _rand((3, 3, 2, 3), 9, scale=0.5)
    b = _rand((3,), 10, scale=0.1)
    got = ad.conv3x3(ad.constant(x), ad.constant(w), ad.constant(b)).value
    padded = np.zeros((7, 7, 2), dtype=np.float64)
    padded[1:6, 1:6] = x.astype(np.float64)
    want = np.zeros((5, 5, 3), dtype=np.float64)
    for i in range(5):
        for j in range(5):
            for ky in range(3):
                for kx in range(3):
                    want[i, j] += padded[i + ky, j + kx] @ w[ky, kx].astype(np.float64)
    want += b.astype(np.float64)
    np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-5)


def test_elementwise_gradients():
    builders = [
        lambda v: ad.sum_all(ad.square(v)),
        lambda v: ad.sum_all(ad.mul(v, v)),
        lambda v: ad.sum_all(ad.silu(v)),
        lambda v: ad.sum_all(ad.exp(ad.mul(v, 0.3))),
        lambda v: ad.mean_all(ad.div(v, ad.add(ad.square(v), 1.0))),
        lambda v: ad.frob_norm(v),
        lambda v: ad.sum_all(ad.sqrt(ad.add(ad.square(v), 0.5))),
        lambda v: ad.sum_all(ad.log(ad.add(ad.square(v), 0.5))),
    ]
    for trial, builder in enumerate(builders):
        x = _rand((4, 3), 20 + trial)
        worst = ad.check_gradient(builder, x, rtol=1e-3)
        assert worst <= 1e-3


def test_broadcast_gradients():
    row = _rand((4,), 30, scale=0.5)

    def builder(v):
        return ad.sum_all(ad.square(ad.add(v, ad.constant(row))))

    ad.check_gradient(builder, _rand((3, 4), 31), rtol=1e-3)

    def builder_mul(v):
        return ad.sum_all(ad.mul(v, ad.constant(row)))

    ad.check_gradient(builder_mul, _rand((3, 4), 32), rtol=1e-3)


def test_structural_gradients():
    def thru_reshape(v):
        return ad.frob_norm(ad.reshape(v, (2, 6)))

    ad.check_gradient(thru_reshape, _rand((3, 4), 40), rtol=1e-3)

    def thru_transpose(v):
        return ad.sum_all(ad.square(ad.transpose2d(v)))

    ad.check_gradient(thru_transpose, _rand((3, 4), 41), rtol=1e-3)

    def thru_roll(v):
        return ad.sum_all(ad.mul(v, ad.roll(v, 1, 0)))

    ad.check_gradient(thru_roll, _rand((4, 4), 42), rtol=1e-3)


def test_matmul_gradients_both_sides():
    a = _rand((3, 4), 50)
    b = _rand((4, 2), 51)

    def wrt_a(v):
        return ad.frob_norm(ad.matmul(v, ad.constant(b)))

    def wrt_b(v):
        return ad.frob_norm(ad.matmul(ad.constant(a), v))

    ad.check_gradient(wrt_a, a, rtol=1e-3)
    ad.check_gradient(wrt_b, b, rtol=1e-3)


def test_softmax_pool_conv_gradients():
    target = _rand((4, 3), 60)

    def thru_softmax(v):
        return ad.frob_norm(ad.sub(ad.softmax_rows_v(v), ad.constant(target)))

    ad.check_gradient(thru_softmax, _rand((4, 3), 61), rtol=1e-3)

    def thru_pool(v):
        return ad.frob_norm(ad.avg_pool2_v(v))

    ad.check_gradient(thru_pool, _rand((4, 4, 1), 62), rtol=1e-3)

    w = _rand((3, 3, 1, 2), 63, scale=0.5)
    b = _rand((2,), 64, scale=0.1)

    def thru_conv(v):
        return ad.frob_norm(ad.conv3x3(v, ad.constant(w), ad.constant(b)))

    ad.check_gradient(thru_conv, _rand((4, 4, 1), 65), rtol=1e-3)

    x = _rand((4, 4, 1), 66)

    def conv_wrt_w(v):
        return ad.frob_norm(ad.conv3x3(ad.constant(x), v, ad.constant(b)))

    ad.check_gradient(conv_wrt_w, w, rtol=1e-3)


def test_clamp_min_gradient_away_from_kink():
    x = np.array([[-2.0, -0.5, 0.5, 2.0]], dtype=np.float32)

    def builder(v):
        return ad.sum_all(ad.square(ad.clamp_min(v, 0.0)))

    ad.check_gradient(builder, x, rtol=1e-3)
    got = ad.gradient(builder, x)
    np.testing.assert_allclose(got, np.array([[0.0, 0.0, 1.0, 4.0]]), atol=1e-6)


def test_mean_axis_gradient():
    def builder(v):
        return ad.frob_norm(ad.sub(v, ad.mean_axis(v, 0)))

    ad.check_gradient(builder, _rand((5, 3), 70), rtol=1e-3)


def test_deep_chain_backprop_is_iterative():
    x = ad.tracked(np.ones((2, 2), dtype=np.float32))
    node = x
    for _ in range(3000):
        node = ad.add(node, 1.0)
    loss = ad.sum_all(node)
    grads = ad.backprop(loss)
    np.testing.assert_allclose(grads[id(x)], np.ones((2, 2)))


def test_gradient_of_untouched_input_is_zero():
    got = ad.gradient(lambda v: ad.sum_all(ad.constant(np.ones(3))), np.ones(4))
    np.testing.assert_array_equal(got, np.zeros(4))


def test_gradient_rejects_non_scalar_loss():
    with pytest.raises(ParameterError):
        ad.gradient(lambda v: ad.square(v), np.ones((2, 2)))


def test_check_gradient_raises_above_tolerance():
    with pytest.raises(AssertionError):
        ad.check_gradient(
            lambda v: ad.sum_all(ad.exp(v)), _rand((3, 3), 80), rtol=0.0
        )


def test_constant_inputs_not_tracked():
    c = ad.constant(np.ones(3))
    t = ad.tracked(np.ones(3))
    assert not c.requires_grad
    assert t.requires_grad
