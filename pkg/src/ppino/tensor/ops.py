"""Differentiable primitives.

Each function computes its result with numpy and registers a backward closure.
Layout convention for images is channel-first ``(batch, channels, H, W)``.
"""
from __future__ import annotations

import functools
from typing import Sequence

import numpy as np

from .engine import DTYPE, ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * np.conj(bd), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * np.conj(ad), bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(ad * bd, (a, b), bw, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,), "scale")


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_node(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product; a 2-D right operand is applied along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        k = ad.shape[-1]
        a2 = ad.reshape(-1, k)
        out = (a2 @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))

        def bw(g):
            g2 = g.reshape(-1, bd.shape[1])
            ga = (g2 @ bd.T).reshape(ad.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return make_node(out, (a, b), bw, "matmul")

    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), bw, "matmul")


def along_axis(x, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed matrix along one of the last two axes (``y = M x`` on that axis)."""
    x = as_tensor(x)
    m = np.asarray(matrix, dtype=DTYPE)
    if axis not in (-1, -2):
        axis = axis - x.ndim
    if axis not in (-1, -2):
        raise ShapeError(f"along_axis: only the last two axes are supported, got axis {axis}")
    if x.shape[axis] != m.shape[1]:
        raise ShapeError(f"along_axis: matrix {m.shape} does not match axis of {x.shape}")
    if axis == -1:
        out = x.data @ m.T
        return make_node(out, (x,), lambda g: (g @ m,), "along_axis")
    out = np.matmul(m, x.data)
    return make_node(out, (x,), lambda g: (np.matmul(m.T, g),), "along_axis")


# -- reductions and shape manipulation ---------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[i] for i in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_node(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), bw, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.data.dtype
    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros(shape, dtype=np.result_type(dtype, g.dtype))
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(a.data[idx], (a,), bw, "getitem")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} does not conform to {ref} along axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return make_node(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {old} to {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (_unbroadcast(g, old),), "broadcast_to")


# -- activations ----------------------------------------------------------------

_GELU_A = 1.5957691216057308  # 2*sqrt(2/pi)
_GELU_B = 0.044715


_CHUNK = 16384  # elements per block; keeps the multi-pass arithmetic cache resident


def _gelu_with_slope(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    xf = x.reshape(-1)
    out = np.empty_like(xf)
    slope = np.empty_like(xf)
    z = np.empty(min(_CHUNK, xf.size))
    s = np.empty_like(z)
    with np.errstate(over="ignore"):
        for a in range(0, xf.size, _CHUNK):
            v = xf[a:a + _CHUNK]
            n = v.size
            zz, ss, dd = z[:n], s[:n], slope[a:a + n]
            np.multiply(v, v, out=zz)
            zz *= _GELU_B
            zz += 1.0
            zz *= v
            zz *= -_GELU_A
            np.exp(zz, out=zz)
            zz += 1.0
            np.divide(1.0, zz, out=ss)  # sigmoid(A*(x + B x^3))
            np.multiply(v, ss, out=out[a:a + n])
            # d/dx = s + x s (1-s) A (1 + 3 B x^2)
            np.multiply(v, v, out=dd)
            dd *= 3.0 * _GELU_B
            dd += 1.0
            dd *= _GELU_A
            dd *= v
            np.subtract(1.0, ss, out=zz)
            dd *= zz
            dd += 1.0
            dd *= ss
    return out.reshape(x.shape), slope.reshape(x.shape)


def gelu(a) -> Tensor:
    """GeLU, tanh approximation written as ``x * sigmoid(2*sqrt(2/pi)*(x + 0.044715 x^3))``."""
    a = as_tensor(a)
    out, slope = _gelu_with_slope(np.ascontiguousarray(a.data))
    return make_node(out, (a,), lambda g: (g * slope,), "gelu")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return make_node(a.data * factor, (a,), lambda g: (g * factor,), "leaky_relu")


def identity(a) -> Tensor:
    return as_tensor(a)


ACTIVATIONS = {"gelu": gelu, "relu": relu, "leaky_relu": leaky_relu, "identity": identity}


# -- convolution and normalization ----------------------------------------------

def conv2d_same(x, weight, bias=None) -> Tensor:
    """Stride-1 2-D convolution (cross-correlation) with zero 'same' padding.

    x: (B, Cin, H, W); weight: (Cout, Cin, k, k) with k odd; bias: (Cout,).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d_same: expected 4-D input and kernel, got {x.shape} and {weight.shape}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeError(f"conv2d_same: input channels of {x.shape} do not match kernel {weight.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d_same: kernel extents must be odd, got {weight.shape}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))  # B,C,H,W,kh,kw
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, C * kh * kw)
    w2 = weight.data.reshape(Co, C * kh * kw)
    out = (cols @ w2.T).reshape(B, H, W, Co)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (Co,):
            raise ShapeError(f"conv2d_same: bias shape {bias.shape} does not match {Co} output channels")
        out = out + bias.data
        parents.append(bias)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * H * W, Co)
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(B, H, W, C, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + H, j:j + W] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return make_node(out, parents, bw, "conv2d_same")


def batch_norm2d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                 training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (batch, H, W); running buffers updated in place when training."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm2d: input {x.shape} with affine shapes {gamma.shape}, {beta.shape}")
    xd = x.data
    shp = (1, -1, 1, 1)
    if training:
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        n = xd.size // xd.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean.copy(), running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(shp)) * inv.reshape(shp)
    out = xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)

    def bw(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gxhat = g * gamma.data.reshape(shp)
        if training:
            gx = (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                  - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)) * inv.reshape(shp)
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, gg, gb

    return make_node(out, (x, gamma, beta), bw, "batch_norm2d")


def avg_pool2(x) -> Tensor:
    """2x2 average pooling over the last two axes (extents must be even)."""
    x = as_tensor(x)
    *lead, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"avg_pool2: spatial extents must be even, got {x.shape}")
    return mean(reshape(x, (*lead, H // 2, 2, W // 2, 2)), axis=(len(lead) + 1, len(lead) + 3))


# -- Fourier transforms ----------------------------------------------------------

def _column_weights(W: int, ncols: int) -> np.ndarray:
    """Multiplicity of each stored real-FFT column in the full Hermitian spectrum."""
    c = np.full(ncols, 2.0)
    c[0] = 1.0
    if W % 2 == 0 and ncols > W // 2:
        c[W // 2] = 1.0
    return c


def rfft2(x) -> Tensor:
    """Real 2-D FFT over the last two axes (numpy convention, unnormalized)."""
    x = as_tensor(x)
    H, W = x.shape[-2:]
    out = np.fft.rfft2(x.data)
    c = _column_weights(W, out.shape[-1])

    def bw(g):
        return (np.fft.irfft2(g / c, s=(H, W)) * (H * W),)

    return make_node(out, (x,), bw, "rfft2")


def irfft2(z, s: tuple[int, int]) -> Tensor:
    """Inverse of :func:`rfft2` for a real signal of spatial extents ``s``."""
    z = as_tensor(z)
    H, W = s
    c = _column_weights(W, z.shape[-1])
    out = np.fft.irfft2(z.data, s=s)

    def bw(g):
        return (np.fft.rfft2(g) * (c / (H * W)),)

    return make_node(out, (z,), bw, "irfft2")


def mode_rows(H: int, m1: int) -> np.ndarray:
    return np.r_[0:m1, H - m1:H]


@functools.lru_cache(maxsize=32)
def _dft_mats(H: int, W: int, m1: int, m2: int):
    rows = mode_rows(H, m1)
    cols = np.arange(m2)
    n1, n2 = np.arange(H), np.arange(W)
    fwd_rows = np.exp(-2j * np.pi * np.outer(rows, n1) / H)              # (2m1, H)
    th2 = 2 * np.pi * np.outer(n2, cols) / W                              # (W, m2)
    fwd_cols = np.concatenate([np.cos(th2), -np.sin(th2)], axis=1)        # (W, 2m2) real/imag stacked
    c = _column_weights(W, m2)
    inv_rows = np.exp(2j * np.pi * np.outer(n1, rows) / H)                # (H, 2m1)
    inv_c = (c[:, None] * np.exp(2j * np.pi * np.outer(cols, n2) / W)) / (H * W)  # (m2, W)
    inv_cols = np.concatenate([inv_c.real, -inv_c.imag], axis=0)          # (2m2, W)
    return fwd_rows, fwd_cols, inv_rows, inv_cols


def _contract_rows(mat: np.ndarray, z: np.ndarray) -> np.ndarray:
    """(R, H) @ z(N, H, K) -> (N, R, K) via one GEMM."""
    N, H, K = z.shape
    t = np.ascontiguousarray(z.transpose(1, 0, 2)).reshape(H, N * K)
    return np.ascontiguousarray((mat @ t).reshape(mat.shape[0], N, K).transpose(1, 0, 2))


def _stack_complex(z: np.ndarray) -> np.ndarray:
    """(..., K) complex -> (..., 2K) real as [Re | Im]."""
    return np.concatenate([z.real, z.imag], axis=-1)


def rfft2_modes(x, m1: int, m2: int) -> Tensor:
    """Real 2-D DFT restricted to the retained low-frequency corner blocks.

    Output (..., 2*m1, m2): rows ``0..m1-1`` then ``H-m1..H-1``, columns ``0..m2-1``;
    identical to ``np.fft.rfft2(x)[..., rows, :m2]``.
    """
    x = as_tensor(x)
    *lead, H, W = x.shape
    if 2 * m1 > H or m2 > W // 2 + 1:
        raise ShapeError(f"rfft2_modes: {m1}x{m2} modes exceed grid {H}x{W}")
    F1, F2, _, _ = _dft_mats(H, W, m1, m2)
    N = int(np.prod(lead)) if lead else 1
    y = x.data.reshape(N * H, W) @ F2
    y = (y[:, :m2] + 1j * y[:, m2:]).reshape(N, H, m2)
    out = _contract_rows(F1, y).reshape(*lead, 2 * m1, m2)

    def bw(g):
        t = _contract_rows(F1.conj().T, g.reshape(N, 2 * m1, m2))   # (N, H, m2)
        # Re(T @ conj(F2c).T) where F2c = cos - i sin
        gx = _stack_complex(t).reshape(N * H, 2 * m2) @ np.concatenate([F2[:, :m2].T, F2[:, m2:].T], axis=0)
        return (gx.reshape(x.shape),)

    return make_node(out, (x,), bw, "rfft2_modes")


def irfft2_modes(z, s: tuple[int, int]) -> Tensor:
    """Inverse real 2-D DFT from retained corner blocks (others implicitly zero)."""
    z = as_tensor(z)
    *lead, r, m2 = z.shape
    H, W = s
    m1 = r // 2
    if r % 2 or 2 * m1 > H or m2 > W // 2 + 1:
        raise ShapeError(f"irfft2_modes: spectrum block {z.shape[-2:]} does not fit grid {s}")
    _, _, G1, G2 = _dft_mats(H, W, m1, m2)
    N = int(np.prod(lead)) if lead else 1
    t = _contract_rows(G1, z.data.reshape(N, r, m2))                # (N, H, m2)
    out = (_stack_complex(t).reshape(N * H, 2 * m2) @ G2).reshape(*lead, H, W)

    def bw(g):
        # grad_Z = G1^H g (G2c)^H with G2c = G2[:m2] - i G2[m2:] (as stored: [Re; -Im])
        gr = g.reshape(N * H, W) @ G2.T                             # (NH, 2m2): [g Re^T | -g Im^T]
        gc = (gr[:, :m2] + 1j * gr[:, m2:]).reshape(N, H, m2)
        # conj(G2c)^T = Re^T + i Im^T; with stored -Im the imaginary part already carries the sign
        return (_contract_rows(G1.conj().T, gc).reshape(z.shape),)

    return make_node(out, (z,), bw, "irfft2_modes")


def mode_mix(z, weight) -> Tensor:
    """Per-mode complex channel mixing of a retained spectrum block.

    z: complex (B, Cin, M1, M2); weight: real (Cin, Cout, M1, M2, 2) holding (Re, Im).
    Returns (B, Cout, M1, M2) with ``out[b,o] = sum_i z[b,i] * w[i,o]`` per mode.
    """
    z, weight = as_tensor(z), as_tensor(weight)
    if z.ndim != 4 or weight.ndim != 5 or weight.shape[-1] != 2:
        raise ShapeError(f"mode_mix: expected (B,C,M1,M2) and (C,O,M1,M2,2), got {z.shape} and {weight.shape}")
    B, C, M1, M2 = z.shape
    if weight.shape[0] != C or weight.shape[2:4] != (M1, M2):
        raise ShapeError(f"mode_mix: spectrum {z.shape} does not match weights {weight.shape}")
    O = weight.shape[1]
    M = M1 * M2
    wc = weight.data[..., 0] + 1j * weight.data[..., 1]
    wp = np.ascontiguousarray(wc.transpose(2, 3, 0, 1)).reshape(M, C, O)
    zp = np.ascontiguousarray(z.data.transpose(2, 3, 0, 1)).reshape(M, B, C)
    out = np.ascontiguousarray((zp @ wp).reshape(M1, M2, B, O).transpose(2, 3, 0, 1))

    def bw(g):
        gp = np.ascontiguousarray(g.transpose(2, 3, 0, 1)).reshape(M, B, O)
        gz = gw = None
        if z.requires_grad:
            gz = (gp @ np.conj(wp).transpose(0, 2, 1)).reshape(M1, M2, B, C).transpose(2, 3, 0, 1)
        if weight.requires_grad:
            gwc = (np.conj(zp).transpose(0, 2, 1) @ gp).reshape(M1, M2, C, O).transpose(2, 3, 0, 1)
            gw = np.stack([gwc.real, gwc.imag], axis=-1)
        return gz, gw

    return make_node(out, (z, weight), bw, "mode_mix")
