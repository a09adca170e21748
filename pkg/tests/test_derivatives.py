import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppino.derivatives import ORDER_CHANNELS, channel_names, fd_matrix, fd_stack, fd_weights
from ppino.grid import GridSpec
from ppino.tensor import Tensor, grad_check, ops


def stack(u, grid, order):
    return fd_stack(u, grid, order).data[0]


def test_classical_weights():
    np.testing.assert_allclose(fd_weights((-1, 0, 1), 1), [-0.5, 0, 0.5], atol=1e-14)
    np.testing.assert_allclose(fd_weights((0, 1, 2), 1), [-1.5, 2, -0.5], atol=1e-14)
    np.testing.assert_allclose(fd_weights((-1, 0, 1), 2), [1, -2, 1], atol=1e-14)
    np.testing.assert_allclose(fd_weights((0, 1, 2, 3), 2), [2, -5, 4, -1], atol=1e-13)
    np.testing.assert_allclose(fd_weights((-2, -1, 0, 1, 2), 3), [-0.5, 1, 0, -1, 0.5], atol=1e-13)
    np.testing.assert_allclose(fd_weights((0, 1, 2, 3, 4), 3), [-2.5, 9, -12, 7, -1.5], atol=1e-12)


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_channel_counts(order):
    grid = GridSpec.square(9)
    u = np.random.default_rng(0).standard_normal((2, 9, 9))
    out = fd_stack(u, grid, order)
    assert out.shape == (2, ORDER_CHANNELS[order], 9, 9)
    assert len(channel_names(order)) == ORDER_CHANNELS[order]


def test_rejects_bad_order():
    with pytest.raises(ValueError):
        fd_stack(np.zeros((8, 8)), GridSpec.square(8), 4)


def test_affine_exact_including_boundaries():
    grid = GridSpec((12, 10), ((0.0, 2.0), (-1.0, 1.0)))
    x1, x2 = grid.mesh()
    s = stack(3 * x1 + 5, grid, 3)
    np.testing.assert_allclose(s[1], 3.0, atol=1e-12)
    for c in range(2, 10):
        np.testing.assert_allclose(s[c], 0.0, atol=1e-9)


def test_quadratic_second_derivative():
    grid = GridSpec.square(16)
    x1, _ = grid.mesh()
    s = stack(x1 ** 2, grid, 2)
    np.testing.assert_allclose(s[3], 2.0, atol=1e-10)


def test_quadratics_exact_at_interior():
    grid = GridSpec((14, 11), ((0.0, 1.0), (0.0, 2.0)))
    x, y = grid.mesh()
    u = 1 + 2 * x - y + 0.5 * x * x + 3 * x * y - 2 * y * y
    exact = [u, 2 + x + 3 * y, -1 + 3 * x - 4 * y, np.ones_like(u), -4 * np.ones_like(u), 3 * np.ones_like(u)]
    s = stack(u, grid, 2)
    for c in range(6):
        np.testing.assert_allclose(s[c][2:-2, 2:-2], exact[c][2:-2, 2:-2], atol=1e-10)
    # the one-sided stencils are exact on quadratics too
    for c in range(6):
        np.testing.assert_allclose(s[c], exact[c], atol=1e-9)


def _analytic(x, y):
    k = 2 * np.pi
    s1, c1, s2, c2 = np.sin(k * x), np.cos(k * x), np.sin(k * y), np.cos(k * y)
    return [s1 * c2, k * c1 * c2, -k * s1 * s2, -k * k * s1 * c2, -k * k * s1 * c2, -k * k * c1 * s2,
            -k ** 3 * c1 * c2, k ** 3 * s1 * s2, -k ** 3 * c1 * c2, k ** 3 * s1 * s2]


def _max_err(n):
    grid = GridSpec.square(n)
    x, y = grid.mesh()
    s = stack(_analytic(x, y)[0], grid, 3)
    ex = _analytic(x, y)
    return np.array([np.max(np.abs(s[c] - ex[c])[2:-2, 2:-2]) for c in range(1, 10)])


def test_richardson_ratio_second_order():
    ratio = _max_err(65) / _max_err(129)
    assert np.all((ratio >= 3.5) & (ratio <= 4.5)), ratio


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_linearity(a, b, seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec((10, 12), ((0.0, 1.0), (-1.0, 1.0)))
    u, v = rng.standard_normal((2, 10, 12))
    lhs = stack(a * u + b * v, grid, 3)
    rhs = a * stack(u, grid, 3) + b * stack(v, grid, 3)
    scale = max(1.0, np.max(np.abs(rhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


def test_matrix_rows_sum_to_zero():
    for d in (1, 2, 3):
        np.testing.assert_allclose(fd_matrix(11, 0.1, d).sum(axis=1), 0.0, atol=1e-8)


def test_stack_is_differentiable():
    rng = np.random.default_rng(3)
    grid = GridSpec.square(8)
    u = Tensor(rng.standard_normal((1, 8, 8)), requires_grad=True)
    w = rng.standard_normal((1, 10, 8, 8))
    res = grad_check(lambda: ops.sum(ops.mul(fd_stack(u, grid, 3), w)), {"u": u})
    assert res.passed, res
