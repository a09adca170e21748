"""Finite-difference derivative channels of a gridded field.

All stencils are second-order accurate: centered in the interior, one-sided
near the edges. Each 1-D operator is stored as a dense matrix and applied with
:func:`ppino.tensor.ops.along_axis`, so the stack is differentiable with
respect to the input field.
"""
from __future__ import annotations

import functools

import numpy as np

from .grid import GridSpec
from .tensor import Tensor, as_tensor, ops

ORDER_CHANNELS = {0: 1, 1: 3, 2: 6, 3: 10}

# (derivative count along axis 0, along axis 1) for every channel, in stack order
_CHANNELS = [
    (0, 0),
    (1, 0), (0, 1),
    (2, 0), (0, 2), (1, 1),
    (3, 0), (2, 1), (1, 2), (0, 3),
]
_NAMES = ["u", "d1", "d2", "d11", "d22", "d12", "d111", "d112", "d122", "d222"]


def channel_names(order: int) -> list[str]:
    _check_order(order)
    return _NAMES[:ORDER_CHANNELS[order]]


def _check_order(order: int) -> None:
    if order not in ORDER_CHANNELS:
        raise ValueError(f"derivative order must be in 0..3, got {order}")


def fd_weights(offsets, deriv: int) -> np.ndarray:
    """Weights w with ``sum_k w_k g(x + o_k h) ~= h^deriv g^(deriv)(x)`` (Taylor matching)."""
    o = np.asarray(offsets, dtype=float)
    n = len(o)
    powers = np.vander(o, n, increasing=True).T  # powers[m, k] = o_k**m
    rhs = np.zeros(n)
    rhs[deriv] = float(np.prod(np.arange(1, deriv + 1)))
    return np.linalg.solve(powers, rhs)


# offsets used at each boundary distance; the interior stencil is the last entry
_STENCILS = {
    1: {"left": [(0, 1, 2)], "center": (-1, 0, 1)},
    2: {"left": [(0, 1, 2, 3)], "center": (-1, 0, 1)},
    3: {"left": [(0, 1, 2, 3, 4), (-1, 0, 1, 2, 3)], "center": (-2, -1, 0, 1, 2)},
}


@functools.lru_cache(maxsize=64)
def fd_matrix(n: int, h: float, deriv: int) -> np.ndarray:
    """Dense (n, n) matrix of the 1-D ``deriv``-th derivative on n equispaced nodes."""
    if deriv == 0:
        return np.eye(n)
    spec = _STENCILS[deriv]
    if n < 5:
        raise ValueError(f"finite-difference stencils need at least 5 nodes, got {n}")
    D = np.zeros((n, n))
    center = np.array(spec["center"])
    wc = fd_weights(center, deriv)
    for i in range(n):
        dist_left, dist_right = i, n - 1 - i
        if dist_left >= -center[0] and dist_right >= center[-1]:
            offs, w = center, wc
        elif dist_left < dist_right:
            offs = np.array(spec["left"][dist_left])
            w = fd_weights(offs, deriv)
        else:
            offs = -np.array(spec["left"][dist_right])
            w = fd_weights(offs, deriv)
        D[i, i + offs] = w
    D /= h ** deriv
    D.setflags(write=False)
    return D


def fd_stack(u, grid: GridSpec, order: int = 2) -> Tensor:
    """Channels ``[u, d1, d2, d11, d22, d12, d111, d112, d122, d222]`` truncated to ``order``.

    ``u`` is (H, W) or (B, H, W); the result is (B, C, H, W) with C = 1, 3, 6, 10.
    Axis 0 of the field is differentiated with spacing ``grid.spacing[0]``.
    """
    _check_order(order)
    u = as_tensor(u)
    if u.ndim == 2:
        u = ops.reshape(u, (1, *u.shape))
    if u.ndim != 3 or u.shape[1:] != grid.shape:
        raise ValueError(f"field shape {u.shape} does not match grid {grid.shape}")
    B, H, W = u.shape
    h1, h2 = grid.spacing

    def apply(field, a: int, b: int):
        if a:
            field = ops.along_axis(field, fd_matrix(H, h1, a), -2)
        if b:
            field = ops.along_axis(field, fd_matrix(W, h2, b), -1)
        return field

    chans = [apply(u, a, b) for a, b in _CHANNELS[:ORDER_CHANNELS[order]]]
    return ops.concat([ops.reshape(c, (B, 1, H, W)) for c in chans], axis=1)
