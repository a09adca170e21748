import numpy as np
import pytest
from scipy import sparse
from scipy.sparse.csgraph import dijkstra

from ppino.benchmarks import (AdvectionConfig, DarcyConfig, DiffusionConfig, EikonalConfig, PoissonConfig,
                              advection_fields, darcy_matrix, default_grid, gen_advection_pair, gen_poisson_pair,
                              generate_dataset, poisson_fields, sample_inputs, snap_source, solve_darcy,
                              solve_eikonal, solve_nonlinear_diffusion)
from ppino.errors import SolverError, ValidationError
from ppino.grid import GridSpec
from ppino.random_fields import GpSpec, darcy_conductivity, eikonal_speed, sample_gp


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# -- fourth-order finite-difference oracles (interior nodes at distance >= 2) -------------

def d1_fd4(u, h, axis):
    u = np.moveaxis(u, axis, 0)
    d = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
    return np.moveaxis(d, 0, axis)


def d2_fd4(u, h, axis):
    u = np.moveaxis(u, axis, 0)
    d = (-u[:-4] + 16 * u[1:-3] - 30 * u[2:-2] + 16 * u[3:-1] - u[4:]) / (12 * h * h)
    return np.moveaxis(d, 0, axis)


# -- Darcy ----------------------------------------------------------------------------------

def _eigen_error(n):
    g = GridSpec.square(n)
    x, y = g.mesh()
    exact = np.sin(np.pi * x) * np.sin(np.pi * y)
    u = solve_darcy(2 * np.pi ** 2 * exact, DarcyConfig(g, np.ones((n, n))))
    return np.max(np.abs(u - exact))


def test_darcy_eigenfunction_second_order():
    e = [_eigen_error(n) for n in (33, 65, 129)]
    assert e[-1] < 1e-4
    orders = np.log2(np.array(e[:-1]) / np.array(e[1:]))
    assert np.all((orders >= 1.8) & (orders <= 2.2)), orders


def test_darcy_zero_source():
    g = GridSpec.square(20)
    a = darcy_conductivity(sample_gp(GpSpec(g, 0.2, seed=1)))
    np.testing.assert_array_equal(solve_darcy(np.zeros((20, 20)), DarcyConfig(g, a)), 0.0)


def test_darcy_matrix_matches_loop_assembly():
    H, W = 9, 8
    g = GridSpec((H, W), ((0.0, 1.0), (0.0, 2.0)))
    rng = np.random.default_rng(0)
    a = rng.uniform(1, 5, (H, W))
    h1, h2 = g.spacing
    hm = lambda p, q: 2 * p * q / (p + q)
    n1, n2 = H - 2, W - 2
    ref = np.zeros((n1 * n2, n1 * n2))
    for i in range(1, H - 1):
        for j in range(1, W - 1):
            k = (i - 1) * n2 + (j - 1)
            for di, dj, h in ((1, 0, h1), (-1, 0, h1), (0, 1, h2), (0, -1, h2)):
                c = hm(a[i, j], a[i + di, j + dj]) / h ** 2
                ref[k, k] += c
                ii, jj = i + di, j + dj
                if 1 <= ii <= n1 and 1 <= jj <= n2:
                    ref[k, (ii - 1) * n2 + (jj - 1)] -= c
    np.testing.assert_allclose(darcy_matrix(a, g).toarray(), ref, rtol=1e-13)


def test_darcy_residual_meets_tolerance_and_max_principle():
    g = GridSpec.square(40)
    a = darcy_conductivity(sample_gp(GpSpec(g, 0.2, seed=2)))
    f = np.abs(sample_gp(GpSpec(g, 0.2, seed=3)))
    cfg = DarcyConfig(g, a)
    u = solve_darcy(f, cfg)
    A = darcy_matrix(a, g)
    b = f[1:-1, 1:-1].ravel()
    assert np.linalg.norm(A @ u[1:-1, 1:-1].ravel() - b) / np.linalg.norm(b) <= 1e-7
    assert u.min() >= -10 * np.finfo(float).eps
    assert np.all(u[0] == 0) and np.all(u[:, -1] == 0)


def test_darcy_nonconvergence_reports_history():
    g = GridSpec.square(30)
    a = darcy_conductivity(sample_gp(GpSpec(g, 0.2, seed=2)))
    f = sample_gp(GpSpec(g, 0.2, seed=3))
    with pytest.raises(SolverError) as info:
        solve_darcy(f, DarcyConfig(g, a, max_iter=3))
    assert len(info.value.history) == 4


# -- nonlinear diffusion --------------------------------------------------------------------

def test_diffusion_zero_forcing():
    g = default_grid("nonlinear_diffusion", 32)
    np.testing.assert_array_equal(solve_nonlinear_diffusion(np.zeros((32, 32)), DiffusionConfig(g)), 0.0)


def test_diffusion_manufactured_solution():
    g = default_grid("nonlinear_diffusion", 128)
    x, t = g.mesh()
    s = np.sin(np.pi * (x + 1) / 2)
    u_star = t * s
    f_star = s + 1e-2 * (np.pi / 2) ** 2 * u_star - 1e-2 * u_star ** 2
    u = solve_nonlinear_diffusion(f_star, DiffusionConfig(g))
    assert rel(u, u_star) <= 1e-3


def test_diffusion_self_convergence_in_substeps():
    g = default_grid("nonlinear_diffusion", 64)
    f = 3 * sample_gp(GpSpec(g, 0.2, seed=4))
    u4 = solve_nonlinear_diffusion(f, DiffusionConfig(g, substeps=4))
    u8 = solve_nonlinear_diffusion(f, DiffusionConfig(g, substeps=8))
    assert rel(u8, u4) <= 1e-4


def test_diffusion_boundary_and_initial_conditions_and_batching():
    g = default_grid("nonlinear_diffusion", 24)
    f = np.stack([sample_gp(GpSpec(g, 0.2, seed=s)) for s in range(3)])
    u = solve_nonlinear_diffusion(f, DiffusionConfig(g))
    assert np.all(u[:, 0, :] == 0) and np.all(u[:, -1, :] == 0) and np.all(u[:, :, 0] == 0)
    np.testing.assert_array_equal(u[1], solve_nonlinear_diffusion(f[1], DiffusionConfig(g)))


def test_diffusion_blowup_detected():
    g = default_grid("nonlinear_diffusion", 16)
    with pytest.raises(SolverError, match="substep"):
        solve_nonlinear_diffusion(np.full((16, 16), 1e4), DiffusionConfig(g))


# -- Eikonal --------------------------------------------------------------------------------

def _distance(g):
    x, y = g.mesh()
    i, j = snap_source(g, (0.0, 10.0))
    return np.hypot(x - x[i, j], y - y[i, j])


def _dijkstra(speed, g):
    H, W = speed.shape
    h1, h2 = g.spacing
    I, J = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    rows, cols, w = [], [], []
    for di, dj in ((1, 0), (0, 1), (1, 1), (1, -1)):
        ok = (I + di < H) & (J + dj >= 0) & (J + dj < W)
        a, b = (I * W + J)[ok], ((I + di) * W + J + dj)[ok]
        rows.append(a)
        cols.append(b)
        w.append(np.hypot(di * h1, dj * h2) / (0.5 * (speed.ravel()[a] + speed.ravel()[b])))
    G = sparse.coo_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(H * W,) * 2)
    i, j = snap_source(g, (0.0, 10.0))
    return dijkstra(G.tocsr(), directed=False, indices=i * W + j).reshape(H, W)


def test_eikonal_constant_speed_is_distance():
    g = default_grid("eikonal", 128)
    u = solve_eikonal(np.ones(g.shape), EikonalConfig(g))
    assert rel(u, _distance(g)) <= 0.02
    assert u[snap_source(g, (0.0, 10.0))] == 0.0


def test_eikonal_source_snapping():
    assert snap_source(default_grid("eikonal", 128), (0.0, 10.0)) == (0, 5)
    assert snap_source(default_grid("eikonal", 33), (0.0, 10.0)) == (0, 1)


def test_eikonal_speed_scaling():
    g = default_grid("eikonal", 48)
    sp = eikonal_speed(sample_gp(GpSpec(g, 0.1, seed=5)))
    np.testing.assert_allclose(solve_eikonal(2 * sp, EikonalConfig(g)), 0.5 * solve_eikonal(sp, EikonalConfig(g)),
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_eikonal_matches_graph_shortest_paths(seed):
    g = default_grid("eikonal", 96)
    sp = eikonal_speed(sample_gp(GpSpec(g, 0.1, seed=seed)))
    assert rel(solve_eikonal(sp, EikonalConfig(g)), _dijkstra(sp, g)) <= 0.05


def test_eikonal_monotone_acceptance_and_bounds():
    g = default_grid("eikonal", 64)
    sp = eikonal_speed(sample_gp(GpSpec(g, 0.1, seed=6)))
    u, order = solve_eikonal(sp, EikonalConfig(g), return_order=True)
    assert len(order) == u.size and np.all(np.isfinite(u))
    assert np.all(np.diff(u.ravel()[order]) >= 0)
    d, h = _distance(g), max(g.spacing)
    assert np.all(u >= d / sp.max() - 2 * h)
    assert np.all(u <= d / sp.min() + 2 * h)


# -- Poisson ----------------------------------------------------------------------------------

def test_poisson_single_mode():
    g = GridSpec.square(33)
    f, u = poisson_fields(np.ones((1, 1)), g, 0.5)
    x1, x2 = g.mesh()
    base = np.sin(np.pi * x1) * np.cos(np.pi * x2)
    np.testing.assert_allclose(u, np.sqrt(2) / np.pi * base, atol=1e-14)
    np.testing.assert_allclose(f, 2 * np.sqrt(2) * np.pi * base, atol=1e-12)
    mask = np.abs(u) > 1e-8
    np.testing.assert_allclose(f[mask] / u[mask], 2 * np.pi ** 2, rtol=1e-10)


def test_poisson_zero_coefficients():
    f, u = poisson_fields(np.zeros((5, 5)), GridSpec.square(16))
    assert np.all(f == 0) and np.all(u == 0)


def test_poisson_fd_residual():
    g = GridSpec.square(256)
    f, u = gen_poisson_pair(PoissonConfig(g, seed=3))
    h1, h2 = g.spacing
    lap = d2_fd4(u, h1, 0)[:, 2:-2] + d2_fd4(u, h2, 1)[2:-2, :]
    assert rel(-lap, f[2:-2, 2:-2]) <= 1e-4


# -- Advection ------------------------------------------------------------------------------

def test_advection_zero_weights():
    g = GridSpec.square(16)
    f, u = advection_fields(np.zeros(4), np.random.default_rng(0).uniform(size=(4, 2)), g)
    assert np.all(f == 0) and np.all(u == 0)


def test_advection_stationary_point():
    g = GridSpec.square(21)
    x, t = g.axes()
    f, u = advection_fields(np.ones(1), np.array([[x[7], t[12]]]), g)
    assert abs(f[7, 12]) <= 1e-14 and u[7, 12] == 1.0


def test_advection_fd_residual():
    g = GridSpec.square(256)
    f, u = gen_advection_pair(AdvectionConfig(g, seed=4))
    hx, ht = g.spacing
    ut_ux = d1_fd4(u, hx, 0)[:, 2:-2] + d1_fd4(u, ht, 1)[2:-2, :]
    assert rel(ut_ux, f[2:-2, 2:-2]) <= 1e-4


def test_config_validation():
    g = GridSpec.square(8)
    with pytest.raises(ValidationError):
        PoissonConfig(g, K=0)
    with pytest.raises(ValidationError):
        AdvectionConfig(g, M=0)
    with pytest.raises(ValidationError):
        generate_dataset("heat", 1, 1, 16)


# -- datasets ---------------------------------------------------------------------------------

def test_darcy_dataset_sizes_and_boundary():
    ds = generate_dataset("darcy", 5, 100, 128, seed=0)
    assert ds.f.shape == ds.u.shape == (105, 128, 128)
    for edge in (ds.u[:, 0, :], ds.u[:, -1, :], ds.u[:, :, 0], ds.u[:, :, -1]):
        assert np.all(edge == 0)
    assert set(np.unique(ds.extras["a"])) <= {4.0, 12.0}


def test_advection_dataset_sizes():
    ds = generate_dataset("advection", 20, 100, 32, seed=1)
    assert ds.u_train.shape == (20, 32, 32) and ds.u_test.shape == (100, 32, 32)


@pytest.mark.parametrize("bench", ["darcy", "nonlinear_diffusion", "eikonal", "poisson", "advection"])
def test_dataset_deterministic(bench):
    a = generate_dataset(bench, 2, 2, 16, seed=11)
    b = generate_dataset(bench, 2, 2, 16, seed=11)
    c = generate_dataset(bench, 2, 2, 16, seed=12)
    np.testing.assert_array_equal(a.f, b.f)
    np.testing.assert_array_equal(a.u, b.u)
    assert not np.array_equal(a.f, c.f)
    # inputs come from the same sampler the training loop uses
    np.testing.assert_array_equal(sample_inputs(bench, a.grid, 11, range(4)), a.f)


def test_eikonal_inputs_are_valid_speeds():
    f = sample_inputs("eikonal", default_grid("eikonal", 24), 0, range(50))
    assert np.all(f >= 1.0)
