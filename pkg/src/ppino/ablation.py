"""Sweeps over the physics-network architecture, the derivative order and the loss weight."""
from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .benchmarks import Dataset
from .config import ExperimentConfig
from .errors import NumericalError, ValidationError
from .grid import GridSpec
from .operators import FNO, FnoConfig
from .random_fields import rng_for
from .tensor import Module

KINDS = ("phi-arch", "deriv-order", "lambda")
PHI_ARCHS = ("ours", "mlp", "operator")
LAMBDAS = tuple(float(x) for x in np.geomspace(0.5, 100.0, 7))


class OperatorPhi(Module):
    """An FNO used in place of the physics network: maps u straight to f, no derivative features."""

    def __init__(self, cfg: FnoConfig, rng: np.random.Generator):
        super().__init__()
        self.net = FNO(cfg, rng)

    def forward(self, u, grid: GridSpec):
        return self.net(u, grid)

    def fit_normalization(self, u: np.ndarray, f: np.ndarray, grid: GridSpec) -> None:
        self.net.fit_normalization(u, f)


def cells(kind: str, base: ExperimentConfig) -> list[tuple[str, ExperimentConfig, str]]:
    """(label, config, phi architecture) per sweep cell, in table order."""
    if kind not in KINDS:
        raise ValidationError(f"ablation kind must be one of {', '.join(KINDS)}, got {kind!r}")
    base = dataclasses.replace(base, method="ppi")
    if kind == "phi-arch":
        mlp = dataclasses.replace(base, phi=dataclasses.replace(base.phi, use_conv=False))
        return [("ours", base, "ours"), ("mlp", mlp, "ours"), ("operator", base, "operator")]
    if kind == "deriv-order":
        return [(str(k), dataclasses.replace(base, phi=dataclasses.replace(base.phi, order=k)), "ours")
                for k in range(4)]
    return [(repr(lam), dataclasses.replace(base, train=dataclasses.replace(base.train, lam=lam)), "ours")
            for lam in LAMBDAS]


def operator_phi_factory(cfg: ExperimentConfig):
    grid_min = min(cfg.grid)
    modes = min(FnoConfig().modes, grid_min // 2)
    return OperatorPhi(FnoConfig(modes=modes, layers=2), rng_for(cfg.seed, 13))


def run_cell(label: str, cfg: ExperimentConfig, arch: str, ds: Dataset) -> dict:
    from .pipeline import run_experiment

    factory = operator_phi_factory if arch == "operator" else None
    try:
        run = run_experiment(cfg, ds, phi_factory=factory)
    except (ValidationError, NumericalError, FloatingPointError) as exc:
        raise type(exc)(f"sweep cell {label!r}: {exc}") from exc
    return {"cell": label, "phi_relative_l2": run.report.phi_relative_l2,
            "operator_relative_l2": run.report.relative_l2}


def run_sweep(kind: str, base: ExperimentConfig, ds: Dataset, workers: int = 1) -> list[dict]:
    todo = cells(kind, base)
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(todo))) as pool:
            rows = list(pool.map(run_cell, *zip(*[(l, c, a, ds) for l, c, a in todo])))
    else:
        rows = [run_cell(l, c, a, ds) for l, c, a in todo]
    return [{"kind": kind, **r} for r in rows]


def workers_from_env() -> int:
    raw = os.environ.get("PPNO_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"PPNO_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"PPNO_THREADS must be at least 1, got {n}")
    return n
