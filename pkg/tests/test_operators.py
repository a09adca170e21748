import numpy as np
import pytest

from ppino.benchmarks import PoissonConfig, default_grid, gen_poisson_pair
from ppino.errors import ValidationError
from ppino.grid import GridSpec
from ppino.operators import (DONet, DonetConfig, FNO, FnoConfig, FourierLayer, count_parameters, pino_residual,
                             predict)
from ppino.tensor import Tensor, grad_check, no_grad, ops


def small_fno(rng, **kw):
    cfg = dict(modes=4, width=4, layers=2, proj_width=8)
    cfg.update(kw)
    return FNO(FnoConfig(**cfg), rng)


def sq(t):
    return ops.mean(ops.square(t))


# -- FNO ------------------------------------------------------------------------------

def test_zero_spectral_weights_reduce_to_pointwise():
    rng = np.random.default_rng(0)
    layer = FourierLayer(5, 3, rng)
    layer.spectral.data[...] = 0.0
    h = rng.standard_normal((2, 5, 12, 10))
    with no_grad():
        out = layer(h).data
    W, b = layer.pointwise.weight.data, layer.pointwise.bias.data
    expect = np.einsum("oc,bchw->bohw", W, h) + b.reshape(1, -1, 1, 1)
    np.testing.assert_allclose(out, expect, atol=1e-13)
    with no_grad():
        act = ops.gelu(layer(h)).data
    np.testing.assert_allclose(act, ops.gelu(Tensor(expect)).data, atol=1e-13)


def _bandlimited(n, coefs):
    x = np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    out = np.zeros((n, n))
    for k1, k2, a, b in coefs:
        ph = 2 * np.pi * (k1 * X + k2 * Y)
        out += a * np.cos(ph) + b * np.sin(ph)
    return out


def _spectral_resample(u, n):
    m = u.shape[-1]
    U = np.fft.fft2(u) / m**2
    k = np.fft.fftfreq(m, 1 / m).astype(int)
    V = np.zeros((n, n), complex)
    V[np.ix_(k % n, k % n)] = U
    return np.real(np.fft.ifft2(V)) * n**2


def test_fno_resolution_invariance_on_bandlimited_input():
    rng = np.random.default_rng(1)
    model = FNO(FnoConfig(modes=12, width=6, layers=2, proj_width=8, activation="identity", coords=False), rng)
    coefs = [(int(rng.integers(-11, 12)), int(rng.integers(0, 12)), *rng.standard_normal(2)) for _ in range(12)]
    with no_grad():
        u64 = model(_bandlimited(64, coefs)[None]).data[0]
        u128 = model(_bandlimited(128, coefs)[None]).data[0]
    up = _spectral_resample(u64, 128)
    assert np.linalg.norm(up - u128) / np.linalg.norm(u128) <= 1e-6


def test_fno_gradcheck_two_layers_16():
    rng = np.random.default_rng(2)
    model = small_fno(rng)
    f = rng.standard_normal((2, 16, 16))
    u = rng.standard_normal((2, 16, 16))
    res = grad_check(lambda: sq(model(f) - u), model.named_parameters(), tolerance=1e-5,
                     max_per_param=12, rng=np.random.default_rng(0))
    assert res.passed, res


def test_fno_rejects_small_grid():
    model = FNO(FnoConfig(modes=12, width=4, layers=1, proj_width=4), np.random.default_rng(0))
    with pytest.raises(ValidationError, match="too small"):
        model(np.zeros((1, 16, 16)))
    model(np.zeros((1, 24, 24)))


def test_fno_output_is_real_and_matches_numpy_irfft():
    rng = np.random.default_rng(3)
    layer = FourierLayer(3, 4, rng)
    h = rng.standard_normal((2, 3, 16, 12))
    with no_grad():
        k = ops.irfft2_modes(ops.mode_mix(ops.rfft2_modes(h, 4, 4), layer.spectral), (16, 12)).data
    assert k.dtype == np.float64
    spec = np.fft.rfft2(h)
    rows = np.r_[0:4, 12:16]
    w = layer.spectral.data[..., 0] + 1j * layer.spectral.data[..., 1]
    full = np.zeros((2, 3, 16, 7), complex)
    full[:, :, rows, :4] = np.einsum("bixy,ioxy->boxy", spec[:, :, rows, :4], w)
    np.testing.assert_allclose(k, np.fft.irfft2(full, s=(16, 12)), atol=1e-12)
    # the same spectrum pushed through a complex inverse has no imaginary residue once
    # Hermitian symmetry is restored, which is what the real inverse assumes
    assert np.max(np.abs(np.imag(np.fft.ifft2(np.fft.fft2(k))))) <= 1e-12


def test_fno_affine_in_diagnostic_mode():
    rng = np.random.default_rng(4)
    model = small_fno(rng, activation="identity", coords=False)
    f1, f2 = rng.standard_normal((2, 1, 16, 16))
    zero = np.zeros_like(f1)
    with no_grad():
        m0 = model(zero).data
        lhs = model(2.5 * f1 - 0.7 * f2).data - m0
        rhs = 2.5 * (model(f1).data - m0) - 0.7 * (model(f2).data - m0)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_fno_parameter_counts():
    model = FNO(FnoConfig(), np.random.default_rng(0))
    assert count_parameters(model.lift) == 3 * 32 + 32 == 128
    assert count_parameters(model) == 2_368_001
    complex_as_one = count_parameters(model) - sum(layer.spectral.size // 2 for layer in model.fourier)
    assert complex_as_one == 1_188_353


def test_counts_and_outputs_stable_across_state_round_trip():
    rng = np.random.default_rng(5)
    a = small_fno(rng)
    b = small_fno(np.random.default_rng(99))
    b.load_state_dict(a.state_dict())
    assert count_parameters(a) == count_parameters(b)
    f = rng.standard_normal((3, 16, 16))
    np.testing.assert_array_equal(predict(a, f), predict(b, f))


def test_state_prefix_and_mismatch():
    a = small_fno(np.random.default_rng(0))
    state = a.state_dict("fno.")
    assert all(k.startswith("fno.") for k in state)
    with pytest.raises(KeyError):
        small_fno(np.random.default_rng(0), layers=3).load_state_dict(state, "fno.")


# -- DONet ----------------------------------------------------------------------------

GRID16 = GridSpec((16, 16))


def donet(p=4, branch="mlp", **kw):
    cfg = DonetConfig(branch=branch, depth=2, width=5, trunk_depth=2, trunk_width=5, p=p,
                      conv_layers=2, conv_channels=[3, 4], **kw)
    return DONet(cfg, GRID16, np.random.default_rng(6))


def test_donet_rank_one_product():
    net = donet(p=1)
    last_b, last_t = net.branch[len(net.branch) - 1], net.trunk[len(net.trunk) - 1]
    last_b.weight.data[...] = 0.0
    last_b.bias.data[...] = 2.0
    last_t.weight.data[...] = 0.0
    last_t.bias.data[...] = 3.0
    with no_grad():
        out = net(np.random.default_rng(0).standard_normal((2, 16, 16))).data
    np.testing.assert_array_equal(out, 6.0)
    with no_grad():
        q = net(np.zeros((1, 16, 16)), query=[[0.3, 0.7], [0.1, 0.2]]).data
    np.testing.assert_array_equal(q, 6.0)


def test_donet_zero_branch_gives_zero():
    net = donet()
    last = net.branch[len(net.branch) - 1]
    last.weight.data[...] = 0.0
    last.bias.data[...] = 0.0
    with no_grad():
        out = net(np.random.default_rng(0).standard_normal((3, 16, 16))).data
    assert np.all(out == 0.0)


def test_donet_bilinear_in_branch_output():
    net = donet()
    f = np.random.default_rng(1).standard_normal((2, 16, 16))
    with no_grad():
        b = net.branch_features(f).data
        t = net.trunk(net.unit_queries()).data
        out = net(f).data
    np.testing.assert_allclose(out.reshape(2, -1), b @ t.T, atol=1e-13)
    last = net.branch[len(net.branch) - 1]
    last.weight.data *= 3.0
    last.bias.data *= 3.0
    with no_grad():
        np.testing.assert_allclose(net(f).data, 3.0 * out, atol=1e-12)


@pytest.mark.parametrize("branch", ["mlp", "conv"])
def test_donet_gradcheck(branch):
    net = donet(branch=branch)
    rng = np.random.default_rng(7)
    f = rng.standard_normal((3, 16, 16))
    u = rng.standard_normal((3, 16, 16))
    # ReLU kinks: a smaller step keeps the central difference on one side of every kink
    res = grad_check(lambda: sq(net(f) - u), net.named_parameters(), tolerance=1e-5, step=1e-6,
                     max_per_param=12, rng=np.random.default_rng(0))
    assert res.passed, res


def test_donet_rejects_sensor_mismatch():
    with pytest.raises(ValidationError, match="sensors"):
        donet()(np.zeros((1, 16, 12)))


def test_donet_width_doubling_quadruples_hidden_weights():
    def hidden(w):
        net = DONet(DonetConfig(depth=4, width=w, p=w), GRID16, np.random.default_rng(0))
        return sum(net.branch[i].weight.size for i in (1, 2))
    assert hidden(60) == 4 * hidden(30)


def test_conv_branch_batch_norm_eval_uses_running_stats():
    net = donet(branch="conv")
    f = np.random.default_rng(2).standard_normal((4, 16, 16))
    with no_grad():
        net(f)
    rm = net.branch.norms[0].running_mean.copy()
    a = predict(net, f[:1])
    b = predict(net, f)[:1]
    np.testing.assert_allclose(a, b, atol=1e-13)   # eval mode: no cross-sample coupling
    np.testing.assert_array_equal(net.branch.norms[0].running_mean, rm)


# -- physics residual -----------------------------------------------------------------

def test_poisson_residual_of_exact_pair_is_small():
    grid = default_grid("poisson", 128)
    f, u = gen_poisson_pair(PoissonConfig(grid, K=1), np.random.default_rng(0))
    assert pino_residual(u[None], f[None], "poisson", grid).item() <= 1e-4


def test_residual_of_zero_prediction_is_mean_square_source():
    grid = GridSpec((12, 10))
    f = np.random.default_rng(1).standard_normal((2, 12, 10))
    r = pino_residual(np.zeros_like(f), f, "advection", grid).item()
    assert r == pytest.approx(np.mean(f[:, 1:-1, 1:-1] ** 2), rel=1e-14)


@pytest.mark.parametrize("benchmark", ["poisson", "advection"])
def test_residual_matches_loop_oracle(benchmark):
    grid = GridSpec((9, 8), ((0.0, 2.0), (-1.0, 1.0)))
    rng = np.random.default_rng(2)
    u = rng.standard_normal((2, 9, 8))
    f = rng.standard_normal((2, 9, 8))
    h1, h2 = grid.spacing
    total, count = 0.0, 0
    for n in range(2):
        for i in range(1, 8):
            for j in range(1, 7):
                d1 = (u[n, i + 1, j] - u[n, i - 1, j]) / (2 * h1)
                d2 = (u[n, i, j + 1] - u[n, i, j - 1]) / (2 * h2)
                d11 = (u[n, i + 1, j] - 2 * u[n, i, j] + u[n, i - 1, j]) / h1**2
                d22 = (u[n, i, j + 1] - 2 * u[n, i, j] + u[n, i, j - 1]) / h2**2
                r = -(d11 + d22) - f[n, i, j] if benchmark == "poisson" else d1 + d2 - f[n, i, j]
                total += r * r
                count += 1
    got = pino_residual(u, f, benchmark, grid).item()
    assert got == pytest.approx(total / count, rel=1e-12)


def test_residual_rejects_other_benchmarks():
    with pytest.raises(ValidationError, match="poisson, advection"):
        pino_residual(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)), "darcy", GridSpec((8, 8)))
