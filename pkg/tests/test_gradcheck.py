import numpy as np
import pytest

import dfmlab as dl
from dfmlab import tensor as T


def test_quadratic_form(rng):
    a = rng.standard_normal((5, 5))

    def fn(t):
        at = dl.Tensor(a)
        row = T.linear(t, at, dl.Tensor(np.zeros(5)))
        return T.sum_all(T.hadamard(row, row))

    err = dl.grad_check(fn, dl.Tensor(rng.standard_normal((1, 5))), h=1e-3)
    assert err < 1e-6


def test_conv_relu_linear_ce_chain(rng):
    w = rng.standard_normal((4, 2, 3, 3)) * 0.5
    b = rng.standard_normal(4) * 0.1
    wl = rng.standard_normal((16, 3)) * 0.5
    bl = rng.standard_normal(3) * 0.1
    labels = np.array([0, 2])

    def fn(t):
        h = T.relu(T.conv2d(t, dl.Tensor(w), dl.Tensor(b), 1, 0))
        h = T.flatten(h)
        return T.softmax_cross_entropy(T.linear(h, dl.Tensor(wl), dl.Tensor(bl)), labels)

    x = rng.standard_normal((2, 2, 4, 4))
    err = dl.grad_check(fn, dl.Tensor(x), h=1e-4)
    assert err < 1e-3


def test_constant_function(rng):
    def fn(t):
        return T.sum_all(T.hadamard(dl.Tensor(np.ones(3)), dl.Tensor(np.ones(3))))

    err = dl.grad_check(fn, dl.Tensor(rng.standard_normal(3)), h=1e-3)
    assert err == 0.0


def test_finite_difference_matches_analytic_sum(rng):
    x = dl.Tensor(rng.standard_normal(6))
    num = dl.finite_difference(lambda t: T.sum_all(T.hadamard(t, t)), x, h=1e-4)
    np.testing.assert_allclose(num, 2 * x.data, atol=1e-6)
