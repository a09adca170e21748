"""Pretraining, the combined data + reconstruction loss, and alternating fine-tuning."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .benchmarks import sample_inputs
from .errors import DivergenceError, ValidationError
from .grid import GridSpec
from .operators import pino_residual, predict
from .tensor import Adam, Module, Tensor, backward, no_grad, ops

STREAM_PRIME = 7


@dataclass
class TrainConfig:
    lam: float = 1.0
    n_prime: int = 200
    alternations: int = 10
    epochs: int = 500              # pretraining epochs for the operator and for phi
    finetune_epochs: int = 500     # epochs per phase inside each alternation
    phi_epochs: int | None = None  # epochs of each phi phase; None uses finetune_epochs
    lr: float = 1e-3
    phi_lr: float = 1e-3
    finetune_lr: float | None = None   # operator step size after pretraining; None keeps lr
    prime_batch: int = 0           # f' per step; 0 uses all n_prime at once
    early_stop: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError(f"lam must be non-negative, got {self.lam}")
        if self.n_prime < 1 or self.alternations < 1:
            raise ValidationError("n_prime and alternations must be at least 1")
        if self.epochs < 0 or self.finetune_epochs < 0 or self.prime_batch < 0:
            raise ValidationError("epoch counts and prime_batch must be non-negative")
        if self.phi_epochs is not None and self.phi_epochs < 0:
            raise ValidationError("phi_epochs must be non-negative")
        if not (self.lr > 0 and self.phi_lr > 0) or (self.finetune_lr is not None and not self.finetune_lr > 0):
            raise ValidationError("learning rates must be positive")

    @property
    def phi_phase_epochs(self) -> int:
        return self.finetune_epochs if self.phi_epochs is None else self.phi_epochs

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Report:
    benchmark: str
    model: str
    method: str
    train_size: int
    seed: int
    relative_l2: float
    trace: list[float]
    best_trace: list[float]
    parameter_counts: dict
    alternations_run: int = 0
    phi_relative_l2: float | None = None
    per_sample: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# -- metrics and losses -------------------------------------------------------------

def relative_l2_per_sample(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValidationError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    p = pred.reshape(len(pred), -1)
    t = truth.reshape(len(truth), -1)
    norms = np.linalg.norm(t, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValidationError(f"truth sample {int(zero[0])} has zero norm")
    return np.linalg.norm(p - t, axis=1) / norms


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over samples of ||pred_n - truth_n|| / ||truth_n||."""
    return float(np.mean(relative_l2_per_sample(pred, truth)))


def data_loss(psi: Module, f, u, grid: GridSpec) -> Tensor:
    return ops.mean(ops.square(psi(f, grid) - u))


def reconstruction_loss(psi: Module, phi: Module, f_prime, grid: GridSpec) -> Tensor:
    """Mean over f' samples and grid nodes of (phi(psi(f')) - f')^2."""
    return ops.mean(ops.square(phi(psi(f_prime, grid), grid) - f_prime))


def ppi_loss(psi: Module, phi: Module, f, u, f_prime, lam: float, grid: GridSpec) -> Tensor:
    if lam < 0:
        raise ValidationError(f"lam must be non-negative, got {lam}")
    loss = data_loss(psi, f, u, grid)
    if lam == 0:
        return loss
    return loss + ops.scale(reconstruction_loss(psi, phi, f_prime, grid), lam)


# -- training loops --------------------------------------------------------------------

def _check(value: float, trace: list[float], what: str) -> None:
    if not np.isfinite(value) or (trace and value > 1e3 * trace[0]):
        raise DivergenceError(f"{what} diverged at epoch {len(trace)} (loss {value:.3e})", trace)


def fit(loss_fn: Callable[[int], Tensor], opt: Adam, epochs: int, what: str) -> list[float]:
    """Run ``epochs`` Adam steps on ``loss_fn(epoch)``; returns the loss before every step."""
    trace: list[float] = []
    for e in range(epochs):
        opt.zero_grad()
        loss = loss_fn(e)
        value = loss.item()
        _check(value, trace, what)
        trace.append(value)
        backward(loss)
        opt.step()
    return trace


def pretrain_operator(psi: Module, f: np.ndarray, u: np.ndarray, grid: GridSpec, epochs: int,
                      opt: Adam) -> list[float]:
    if len(f) < 1:
        raise ValidationError("pretraining needs at least one training pair")
    return fit(lambda e: data_loss(psi, f, u, grid), opt, epochs, "operator training")


def _batch(arr: np.ndarray, step: int, size: int) -> np.ndarray:
    """Deterministic cyclic minibatch ``step`` of ``arr``; size 0 means the whole array."""
    n = len(arr)
    if size == 0 or size >= n:
        return arr
    start = (step * size) % n
    idx = (start + np.arange(size)) % n
    return arr[idx]


@dataclass
class FinetuneState:
    """What the alternation loop keeps between phases."""
    psi_opt: Adam
    phi_opt: Adam | None
    trace: list[float] = field(default_factory=list)
    best_error: float = np.inf
    best_psi: dict | None = None
    best_phi: dict | None = None
    aborted: str | None = None
    initial_error: float = np.nan


def sample_input_functions(benchmark: str, grid: GridSpec, n: int, seed: int, round_: int = 0) -> np.ndarray:
    """Fresh input functions for one alternation; a pure function of (benchmark, grid, n, seed, round)."""
    return sample_inputs(benchmark, grid, seed, range(round_ * n, (round_ + 1) * n), stream=STREAM_PRIME)


def psi_phase(psi, phi, f, u, f_prime, cfg: TrainConfig, grid: GridSpec, opt: Adam) -> list[float]:
    phi.requires_grad_(False)
    try:
        return fit(lambda e: ppi_loss(psi, phi, f, u, _batch(f_prime, e, cfg.prime_batch), cfg.lam, grid),
                   opt, cfg.finetune_epochs, "operator fine-tuning")
    finally:
        phi.requires_grad_(True)


def phi_phase(psi, phi, f, u, f_prime, cfg: TrainConfig, grid: GridSpec, opt: Adam) -> list[float]:
    """Update phi on the full combined loss; the data term is constant here since psi is frozen."""
    u_prime = predict(psi, f_prime, grid)
    with no_grad():
        fixed = data_loss(psi, f, u, grid).item()
    if cfg.lam == 0:
        return [fixed] * cfg.phi_phase_epochs

    def loss(e):
        idx = _batch(np.arange(len(f_prime)), e, cfg.prime_batch)
        rec = ops.mean(ops.square(phi(u_prime[idx], grid) - f_prime[idx]))
        return ops.scale(rec, cfg.lam) + fixed

    return fit(loss, opt, cfg.phi_phase_epochs, "phi fine-tuning")


def alternate_finetune(psi, phi, f, u, grid: GridSpec, cfg: TrainConfig, benchmark: str,
                       evaluate: Callable[[Module], float], psi_opt: Adam, phi_opt: Adam,
                       on_alternation: Callable[[int], None] | None = None) -> FinetuneState:
    """Alternate psi and phi fine-tuning; keeps the best test-error checkpoint of both networks."""
    state = FinetuneState(psi_opt, phi_opt)
    if cfg.finetune_lr is not None:
        psi_opt.lr = cfg.finetune_lr
    start = evaluate(psi)
    state.best_error, state.best_psi, state.best_phi = start, psi.state_dict(), phi.state_dict()
    state.initial_error = start
    history = [start]
    for a in range(cfg.alternations):
        f_prime = sample_input_functions(benchmark, grid, cfg.n_prime, cfg.seed, a)
        try:
            psi_phase(psi, phi, f, u, f_prime, cfg, grid, psi_opt)
            phi_phase(psi, phi, f, u, f_prime, cfg, grid, phi_opt)
            err = evaluate(psi)
            if not np.isfinite(err):
                raise DivergenceError(f"test error is {err}", state.trace)
        except (DivergenceError, FloatingPointError) as exc:
            state.aborted = f"alternation {a}: {exc}"
            break
        state.trace.append(err)
        if err < state.best_error:
            state.best_error, state.best_psi, state.best_phi = err, psi.state_dict(), phi.state_dict()
        history.append(state.best_error)
        if on_alternation:
            on_alternation(a)
        if len(history) >= 3 and history[-3] - history[-1] < cfg.early_stop:
            break
    return state


def continue_training(psi, f, u, grid: GridSpec, cfg: TrainConfig, opt: Adam,
                      evaluate: Callable[[Module], float],
                      extra_loss: Callable[[int, int], Tensor] | None = None,
                      on_round: Callable[[int], None] | None = None) -> FinetuneState:
    """Baseline and physics-informed continuation in blocks of ``finetune_epochs`` steps, evaluated,
    checkpointed and early-stopped at the same points the alternating loop uses."""
    state = FinetuneState(opt, None)
    if cfg.finetune_lr is not None:
        opt.lr = cfg.finetune_lr
    state.best_error, state.best_psi = evaluate(psi), psi.state_dict()
    state.initial_error = state.best_error
    history = [state.best_error]
    for r in range(cfg.alternations):
        def loss(e, r=r):
            base = data_loss(psi, f, u, grid)
            return base if extra_loss is None else base + extra_loss(r, e)
        try:
            fit(loss, opt, cfg.finetune_epochs, "operator training")
            err = evaluate(psi)
            if not np.isfinite(err):
                raise DivergenceError(f"test error is {err}", state.trace)
        except (DivergenceError, FloatingPointError) as exc:
            state.aborted = f"round {r}: {exc}"
            break
        state.trace.append(err)
        if err < state.best_error:
            state.best_error, state.best_psi = err, psi.state_dict()
        history.append(state.best_error)
        if on_round:
            on_round(r)
        if len(history) >= 3 and history[-3] - history[-1] < cfg.early_stop:
            break
    return state


def pino_extra(psi, benchmark: str, grid: GridSpec, cfg: TrainConfig):
    """Residual penalty on fresh inputs for the physics-informed baseline."""
    cache: dict[int, np.ndarray] = {}

    def extra(r: int, e: int):
        if r not in cache:
            cache.clear()
            cache[r] = sample_input_functions(benchmark, grid, cfg.n_prime, cfg.seed, r)
        fp = _batch(cache[r], e, cfg.prime_batch)
        return ops.scale(pino_residual(psi(fp, grid), fp, benchmark, grid), cfg.lam)

    return extra


def clone(module: Module) -> Module:
    return copy.deepcopy(module)
