"""Benchmark problems: input-function samplers and the solvers or closed forms that produce u.

Field layout is ``(n_axis0, n_axis1)``. For the space-time problems axis 0 is x
and axis 1 is t.
"""
from __future__ import annotations

import heapq
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import solve_banded

from .errors import SolverError, ValidationError
from .grid import GridSpec
from .random_fields import GpSpec, darcy_conductivity, eikonal_speed, rng_for, sample_gp_batch

BENCHMARKS = ("darcy", "nonlinear_diffusion", "eikonal", "poisson", "advection")
GENERATOR_VERSION = "1"

# seed streams
_STREAM_SAMPLE = 1
_STREAM_CONDUCTIVITY = 2


def check_benchmark(name: str) -> str:
    if name not in BENCHMARKS:
        raise ValidationError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}")
    return name


def default_grid(benchmark: str, n: int) -> GridSpec:
    bounds = {
        "darcy": ((0.0, 1.0), (0.0, 1.0)),
        "nonlinear_diffusion": ((-1.0, 1.0), (0.0, 1.0)),
        "eikonal": ((0.0, 256.0), (0.0, 256.0)),
        "poisson": ((0.0, 1.0), (0.0, 1.0)),
        "advection": ((0.0, 1.0), (0.0, 1.0)),
    }[check_benchmark(benchmark)]
    return GridSpec((n, n), bounds)


# -- Darcy flow ---------------------------------------------------------------------

@dataclass(frozen=True)
class DarcyConfig:
    grid: GridSpec
    a: np.ndarray = field(repr=False)
    tol: float = 1e-8
    max_iter: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.a.shape != self.grid.shape:
            raise ValidationError(f"conductivity shape {self.a.shape} does not match grid {self.grid.shape}")
        if not np.all(self.a > 0):
            raise ValidationError("conductivity must be strictly positive")


def darcy_matrix(a: np.ndarray, grid: GridSpec) -> sparse.csr_matrix:
    """5-point discretization of ``-div(a grad u)`` on interior nodes, harmonic face averages."""
    H, W = a.shape
    h1, h2 = grid.spacing
    ax = 2 * a[:-1, :] * a[1:, :] / (a[:-1, :] + a[1:, :]) / h1 ** 2  # faces between i and i+1
    ay = 2 * a[:, :-1] * a[:, 1:] / (a[:, :-1] + a[:, 1:]) / h2 ** 2
    m = W - 2
    diag = (ax[:-1, 1:-1] + ax[1:, 1:-1] + ay[1:-1, :-1] + ay[1:-1, 1:]).ravel()
    off0 = -ax[1:-1, 1:-1].ravel()
    off1 = np.concatenate([-ay[1:-1, 1:-1], np.zeros((H - 2, 1))], axis=1).ravel()[:-1]
    return sparse.diags([diag, off0, off0, off1, off1], [0, m, -m, 1, -1], format="csr")


def conjugate_gradient(A, b: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, list[float]]:
    """Jacobi-preconditioned CG until ``||b - A x|| <= tol ||b||``."""
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, [0.0]
    inv_diag = 1.0 / A.diagonal()
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    history = [1.0]
    for _ in range(max_iter):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = float(np.linalg.norm(r)) / bnorm
        history.append(rel)
        if rel <= tol:
            true_rel = float(np.linalg.norm(b - A @ x)) / bnorm
            if true_rel <= 10 * tol:
                return x, history
        z = inv_diag * r
        rz_new = float(r @ z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise SolverError(f"CG did not reach relative residual {tol:g} in {max_iter} iterations "
                      f"(last {history[-1]:.3e})", history)


def solve_darcy(f: np.ndarray, cfg: DarcyConfig, matrix=None) -> np.ndarray:
    """Solve ``-div(a grad u) = f`` with u = 0 on the boundary."""
    if f.shape != cfg.grid.shape:
        raise ValidationError(f"source shape {f.shape} does not match grid {cfg.grid.shape}")
    A = darcy_matrix(cfg.a, cfg.grid) if matrix is None else matrix
    H, W = f.shape
    x, _ = conjugate_gradient(A, f[1:-1, 1:-1].ravel(), cfg.tol, cfg.max_iter)
    u = np.zeros_like(f, dtype=float)
    u[1:-1, 1:-1] = x.reshape(H - 2, W - 2)
    return u


# -- nonlinear diffusion ----------------------------------------------------------------

@dataclass(frozen=True)
class DiffusionConfig:
    grid: GridSpec
    diffusivity: float = 1e-2
    reaction: float = 1e-2
    substeps: int = 4
    lengthscale: float = 0.2
    seed: int = 0


BLOWUP = 1e6


def solve_nonlinear_diffusion(f: np.ndarray, cfg: DiffusionConfig) -> np.ndarray:
    """March ``u_t = D u_xx + k u^2 + f`` from u = 0 with u = 0 at both ends of x.

    Crank-Nicolson for diffusion, second-order Adams-Bashforth for ``k u^2`` and
    the trapezoidal rule for the forcing (f is linear in t between recorded slices).
    ``f`` may be a single (Nx, Nt) field or a batch (B, Nx, Nt); samples are independent.
    """
    single = f.ndim == 2
    fb = f[None] if single else f
    B, Nx, Nt = fb.shape
    if (Nx, Nt) != cfg.grid.shape:
        raise ValidationError(f"forcing shape {(Nx, Nt)} does not match grid {cfg.grid.shape}")
    hx, ht = cfg.grid.spacing
    S = int(cfg.substeps)
    dt = ht / S
    D, k = cfg.diffusivity, cfg.reaction
    n = Nx - 2
    r = D * dt / hx ** 2
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * r
    ab[1, :] = 1.0 + r
    ab[2, :-1] = -0.5 * r

    def explicit_lap(v):
        out = -2.0 * v
        out[1:] += v[:-1]
        out[:-1] += v[1:]
        return out

    fi = np.ascontiguousarray(np.moveaxis(fb[:, 1:-1, :], 0, -1))  # (n, Nt, B)
    u = np.zeros((n, B))
    out = np.zeros((n, Nt, B))
    N_prev = None
    step = 0
    for s in range(Nt - 1):
        f0, f1 = fi[:, s, :], fi[:, s + 1, :]
        for q in range(S):
            fa = f0 + (f1 - f0) * (q / S)
            fb_ = f0 + (f1 - f0) * ((q + 1) / S)
            N_cur = k * u * u
            if N_prev is None:
                # Heun predictor for the first step keeps the start second order
                pred = u + dt * (D * explicit_lap(u) / hx ** 2 + N_cur + fa)
                react = 0.5 * (N_cur + k * pred * pred)
            else:
                react = 1.5 * N_cur - 0.5 * N_prev
            rhs = u + 0.5 * r * explicit_lap(u) + dt * react + 0.5 * dt * (fa + fb_)
            N_prev = N_cur
            u = solve_banded((1, 1), ab, rhs, check_finite=False)
            step += 1
            if not np.all(np.abs(u) <= BLOWUP):
                raise SolverError(f"nonlinear diffusion blew up at substep {step} (t={step * dt:.4f})")
        out[:, s + 1, :] = u
    res = np.zeros((B, Nx, Nt))
    res[:, 1:-1, :] = np.moveaxis(out, -1, 0)
    return res[0] if single else res


# -- Eikonal ------------------------------------------------------------------------------

@dataclass(frozen=True)
class EikonalConfig:
    grid: GridSpec
    source: tuple[float, float] = (0.0, 10.0)
    lengthscale: float = 0.1
    seed: int = 0


def snap_source(grid: GridSpec, source: tuple[float, float]) -> tuple[int, int]:
    idx = []
    for s, n, (lo, _), h in zip(source, grid.shape, grid.bounds, grid.spacing):
        idx.append(int(min(max(round((s - lo) / h), 0), n - 1)))
    return tuple(idx)


def solve_eikonal(speed: np.ndarray, cfg: EikonalConfig, return_order: bool = False):
    """First-arrival times for ``|grad u| = 1/speed`` by first-order fast marching.

    Returns u, or (u, accepted node indices in order) when ``return_order``.
    """
    H, W = speed.shape
    if (H, W) != cfg.grid.shape:
        raise ValidationError(f"speed shape {speed.shape} does not match grid {cfg.grid.shape}")
    if not np.all(speed > 0):
        raise ValidationError("speed must be strictly positive")
    h1, h2 = cfg.grid.spacing
    a1, a2 = 1.0 / h1 ** 2, 1.0 / h2 ** 2
    slow = (1.0 / speed).ravel().tolist()
    inf = math.inf
    u = [inf] * (H * W)
    done = [False] * (H * W)
    si, sj = snap_source(cfg.grid, cfg.source)
    src = si * W + sj
    u[src] = 0.0
    heap = [(0.0, src)]
    order = []
    last = -inf

    def update(p: int, i: int, j: int) -> float:
        ua = inf
        if i > 0 and done[p - W]:
            ua = u[p - W]
        if i < H - 1 and done[p + W] and u[p + W] < ua:
            ua = u[p + W]
        ub = inf
        if j > 0 and done[p - 1]:
            ub = u[p - 1]
        if j < W - 1 and done[p + 1] and u[p + 1] < ub:
            ub = u[p + 1]
        s = slow[p]
        one = min(ua + h1 * s, ub + h2 * s)
        if ua == inf or ub == inf:
            return one
        # two-sided upwind quadratic a1 (v-ua)^2 + a2 (v-ub)^2 = s^2
        c = a1 + a2
        m = a1 * ua + a2 * ub
        disc = m * m - c * (a1 * ua * ua + a2 * ub * ub - s * s)
        if disc < 0:
            return one
        v = (m + math.sqrt(disc)) / c
        return v if v >= max(ua, ub) else one

    while heap:
        d, p = heapq.heappop(heap)
        if done[p]:
            continue
        if d < last - 1e-12 * max(1.0, abs(last)):
            raise AssertionError(f"fast marching accepted {d} after {last}")
        last = d
        done[p] = True
        order.append(p)
        i, j = divmod(p, W)
        for q, qi, qj in ((p - W, i - 1, j), (p + W, i + 1, j), (p - 1, i, j - 1), (p + 1, i, j + 1)):
            if 0 <= qi < H and 0 <= qj < W and not done[q]:
                v = update(q, qi, qj)
                if v < u[q]:
                    u[q] = v
                    heapq.heappush(heap, (v, q))
    out = np.array(u).reshape(H, W)
    if return_order:
        return out, np.array(order)
    return out


# -- Poisson (closed form) ----------------------------------------------------------------

@dataclass(frozen=True)
class PoissonConfig:
    grid: GridSpec
    K: int = 5
    r: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValidationError(f"K must be at least 1, got {self.K}")


def poisson_fields(coef: np.ndarray, grid: GridSpec, r: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """(f, u) for coefficient matrix ``coef`` (K x K) evaluated on ``grid``; f = -lap(u)."""
    K = coef.shape[0]
    x1, x2 = grid.axes()
    idx = np.arange(1, K + 1)
    S = np.sin(np.pi * np.outer(idx, x1))   # (K, H)
    C = np.cos(np.pi * np.outer(idx, x2))   # (K, W)
    lam = idx[:, None] ** 2 + idx[None, :] ** 2
    u = S.T @ (coef * lam ** r) @ C / (np.pi * K ** 2)
    f = S.T @ (coef * lam ** (r + 1)) @ C * (np.pi / K ** 2)
    return f, u


def gen_poisson_pair(cfg: PoissonConfig, rng: np.random.Generator | None = None):
    rng = rng or rng_for(cfg.seed)
    coef = rng.uniform(0.0, 1.0, size=(cfg.K, cfg.K))
    return poisson_fields(coef, cfg.grid, cfg.r)


# -- Advection (closed form) ----------------------------------------------------------------

@dataclass(frozen=True)
class AdvectionConfig:
    grid: GridSpec
    M: int = 50
    lengthscale: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValidationError(f"M must be at least 1, got {self.M}")
        if not self.lengthscale > 0:
            raise ValidationError("lengthscale must be positive")


def advection_fields(weights: np.ndarray, centers: np.ndarray, grid: GridSpec, lengthscale: float = 0.25):
    """(f, u) with ``u = sum_j w_j k(., z_j)`` and ``f = u_t + u_x``; axis 0 is x, axis 1 is t."""
    x, t = grid.axes()
    ell2 = lengthscale ** 2
    dx = x[None, :] - centers[:, :1]          # (M, H)
    dt = t[None, :] - centers[:, 1:]          # (M, W)
    kx = np.exp(-0.5 * dx * dx / ell2)
    kt = np.exp(-0.5 * dt * dt / ell2)
    wk = weights[:, None]
    u = (wk * kx).T @ kt
    f = -((wk * kx * dx).T @ kt + (wk * kx).T @ (kt * dt)) / ell2
    return f, u


def gen_advection_pair(cfg: AdvectionConfig, rng: np.random.Generator | None = None):
    rng = rng or rng_for(cfg.seed)
    (lo1, hi1), (lo2, hi2) = cfg.grid.bounds
    centers = np.column_stack([rng.uniform(lo1, hi1, cfg.M), rng.uniform(lo2, hi2, cfg.M)])
    weights = rng.standard_normal(cfg.M)
    return advection_fields(weights, centers, cfg.grid, cfg.lengthscale)


# -- datasets -------------------------------------------------------------------------------

@dataclass
class Dataset:
    benchmark: str
    grid: GridSpec
    f: np.ndarray            # (n_train + n_test, H, W)
    u: np.ndarray
    n_train: int
    n_test: int
    seed: int
    extras: dict = field(default_factory=dict)

    @property
    def f_train(self) -> np.ndarray:
        return self.f[:self.n_train]

    @property
    def u_train(self) -> np.ndarray:
        return self.u[:self.n_train]

    @property
    def f_test(self) -> np.ndarray:
        return self.f[self.n_train:]

    @property
    def u_test(self) -> np.ndarray:
        return self.u[self.n_train:]


def darcy_context(grid: GridSpec, seed: int) -> np.ndarray:
    """The conductivity shared by every sample of a Darcy dataset."""
    alpha = sample_gp_batch(GpSpec(grid, 0.2), 1, rng_for(seed, _STREAM_CONDUCTIVITY))[0]
    return darcy_conductivity(alpha)


def _draw(benchmark: str, grid: GridSpec, rng: np.random.Generator):
    """One input function plus whatever the closed forms need to evaluate u."""
    if benchmark in ("darcy", "nonlinear_diffusion"):
        return sample_gp_batch(GpSpec(grid, 0.2), 1, rng)[0], None
    if benchmark == "eikonal":
        return eikonal_speed(sample_gp_batch(GpSpec(grid, 0.1), 1, rng)[0]), None
    if benchmark == "poisson":
        cfg = PoissonConfig(grid)
        coef = rng.uniform(0.0, 1.0, size=(cfg.K, cfg.K))
        return poisson_fields(coef, grid, cfg.r)[0], coef
    cfg = AdvectionConfig(grid)
    (lo1, hi1), (lo2, hi2) = grid.bounds
    centers = np.column_stack([rng.uniform(lo1, hi1, cfg.M), rng.uniform(lo2, hi2, cfg.M)])
    weights = rng.standard_normal(cfg.M)
    return advection_fields(weights, centers, grid, cfg.lengthscale)[0], (weights, centers)


def sample_inputs(benchmark: str, grid: GridSpec, seed: int, indices, stream: int = _STREAM_SAMPLE) -> np.ndarray:
    """Input functions only (no solver call), one independent stream per index."""
    check_benchmark(benchmark)
    return np.stack([_draw(benchmark, grid, rng_for(seed, stream, i))[0] for i in indices])


GEN_CHUNK = 16


def _generate_chunk(benchmark: str, grid: GridSpec, seed: int, indices: range) -> tuple[np.ndarray, np.ndarray]:
    """Inputs and solutions for one fixed block of sample indices."""
    fs, aux = zip(*(_draw(benchmark, grid, rng_for(seed, _STREAM_SAMPLE, i)) for i in indices))
    f = np.stack(fs)
    if benchmark == "darcy":
        a = darcy_context(grid, seed)
        cfg = DarcyConfig(grid, a, seed=seed)
        A = darcy_matrix(a, grid)
        u = np.stack([_annotate(i, solve_darcy, fi, cfg, A) for i, fi in zip(indices, f)])
    elif benchmark == "nonlinear_diffusion":
        u = solve_nonlinear_diffusion(f, DiffusionConfig(grid, seed=seed))
    elif benchmark == "eikonal":
        cfg = EikonalConfig(grid, seed=seed)
        u = np.stack([_annotate(i, solve_eikonal, fi, cfg) for i, fi in zip(indices, f)])
    elif benchmark == "poisson":
        u = np.stack([poisson_fields(c, grid, PoissonConfig(grid).r)[1] for c in aux])
    else:
        u = np.stack([advection_fields(w, z, grid, AdvectionConfig(grid).lengthscale)[1] for w, z in aux])
    return f, u


def generate_dataset(benchmark: str, n_train: int, n_test: int, grid: GridSpec | int, seed: int = 0,
                     workers: int = 1) -> Dataset:
    """Samples are produced in fixed blocks of GEN_CHUNK indices, so the bytes do not depend on ``workers``."""
    check_benchmark(benchmark)
    if n_train < 0 or n_test < 0 or n_train + n_test < 1:
        raise ValidationError(f"invalid sizes n_train={n_train}, n_test={n_test}")
    if isinstance(grid, int):
        grid = default_grid(benchmark, grid)
    n = n_train + n_test
    chunks = [range(s, min(s + GEN_CHUNK, n)) for s in range(0, n, GEN_CHUNK)]
    args = [(benchmark, grid, seed, c) for c in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
            parts = list(pool.map(_generate_chunk, *zip(*args)))
    else:
        parts = [_generate_chunk(*a) for a in args]
    f = np.concatenate([p[0] for p in parts])
    u = np.concatenate([p[1] for p in parts])
    extras = {"a": darcy_context(grid, seed)} if benchmark == "darcy" else {}
    return Dataset(benchmark, grid, f, u, n_train, n_test, seed, extras)


def _annotate(index: int, fn, *args):
    try:
        return fn(*args)
    except SolverError as exc:
        raise SolverError(f"sample {index}: {exc}", exc.history) from exc
