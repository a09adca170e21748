"""Gaussian random fields with squared-exponential covariance, and the fields derived from them."""
from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .grid import GridSpec

JITTERS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
CHOLESKY_MAX_EXTENT = 64
EMBEDDING_PADS = (1, 2, 4)
EMBEDDING_TOL = 1e-10  # covariance error allowed from clipping negative eigenvalues


class CovarianceError(np.linalg.LinAlgError):
    """The covariance could not be factorized even after adding the largest jitter."""


@dataclass(frozen=True)
class GpSpec:
    grid: GridSpec
    lengthscale: float
    variance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; used to derive per-sample streams."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, keys)]))


def _se_1d(n: int, lengthscale: float) -> np.ndarray:
    x = np.linspace(0.0, 1.0, n)
    d = x[:, None] - x[None, :]
    return np.exp(-0.5 * (d / lengthscale) ** 2)


@functools.lru_cache(maxsize=32)
def _cholesky_1d(n: int, lengthscale: float) -> np.ndarray:
    k = _se_1d(n, lengthscale)
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(k + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            continue
    eig_min = float(np.linalg.eigvalsh(k).min())
    raise CovarianceError(
        f"SE covariance (n={n}, lengthscale={lengthscale}) not positive definite with jitter up to "
        f"{JITTERS[-1]:g}; smallest eigenvalue {eig_min:.3e}")


@functools.lru_cache(maxsize=16)
def _circulant_sqrt_eigs(shape: tuple[int, int], lengthscale: float) -> np.ndarray | None:
    """sqrt of the eigenvalues of a periodic embedding of the grid covariance.

    The periodic box is enlarged until the embedding is PSD to rounding level;
    None means no tried embedding qualifies (very long lengthscales).
    """
    H, W = shape
    for pad in EMBEDDING_PADS:
        M1, M2 = 2 * pad * (H - 1), 2 * pad * (W - 1)
        i = np.minimum(np.arange(M1), M1 - np.arange(M1)) / (H - 1)
        j = np.minimum(np.arange(M2), M2 - np.arange(M2)) / (W - 1)
        c = np.exp(-0.5 * (i[:, None] ** 2 + j[None, :] ** 2) / lengthscale ** 2)
        lam = np.fft.fft2(c).real
        if -lam[lam < 0].sum() / (M1 * M2) <= EMBEDDING_TOL:
            return np.sqrt(np.clip(lam, 0.0, None) / (M1 * M2))
    return None


def sample_gp_batch(spec: GpSpec, n: int, rng: np.random.Generator, method: str = "auto") -> np.ndarray:
    """``n`` independent zero-mean draws on ``spec.grid`` as an (n, H, W) array.

    ``method`` is "cholesky" (Kronecker-factored, the SE kernel is separable on a box),
    "circulant" (periodic embedding, for large grids), or "auto".
    """
    H, W = spec.grid.shape
    ell, sd = float(spec.lengthscale), float(np.sqrt(spec.variance))
    if method == "auto":
        method = "cholesky" if max(H, W) <= CHOLESKY_MAX_EXTENT else "circulant"
    if method == "circulant":
        root = _circulant_sqrt_eigs((H, W), ell)
        if root is None:
            method = "cholesky"
        else:
            z = rng.standard_normal((n, *root.shape)) + 1j * rng.standard_normal((n, *root.shape))
            y = np.fft.fft2(root * z)
            return sd * np.ascontiguousarray(y.real[:, :H, :W])
    if method != "cholesky":
        raise ValueError(f"unknown sampling method {method!r}")
    L1, L2 = _cholesky_1d(H, ell), _cholesky_1d(W, ell)
    z = rng.standard_normal((n, H, W))
    return sd * np.matmul(np.matmul(L1, z), L2.T)


def sample_gp(spec: GpSpec, method: str = "auto") -> np.ndarray:
    """One draw, a deterministic function of ``spec`` (including its seed)."""
    return sample_gp_batch(spec, 1, rng_for(spec.seed), method)[0]


def darcy_conductivity(alpha: np.ndarray) -> np.ndarray:
    """Two-phase conductivity: 4 where alpha < 0, 12 elsewhere."""
    return np.where(np.asarray(alpha) < 0, 4.0, 12.0)


def eikonal_speed(g: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(g, dtype=float), 0.0) + 1.0
