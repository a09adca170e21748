"""End-to-end experiment runs: build models from a config, train with the chosen method,
and assemble the report and checkpoint contents."""
from __future__ import annotations

import copy
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import container
from .benchmarks import Dataset
from .config import ExperimentConfig
from .errors import ValidationError
from .grid import GridSpec
from .operators import DONet, FNO, count_parameters, predict
from .phi import PhiNet, train_phi
from .random_fields import rng_for
from .tensor import Adam, Module
from .training import (FinetuneState, Report, alternate_finetune, continue_training, pino_extra, pretrain_operator,
                       relative_l2, relative_l2_per_sample)

STREAM_PSI_INIT = 11
STREAM_PHI_INIT = 12


@dataclass
class Run:
    config: ExperimentConfig
    psi: Module
    phi: PhiNet | None
    report: Report
    psi_opt: Adam
    phi_opt: Adam | None


def build_operator(cfg: ExperimentConfig, grid) -> Module:
    rng = rng_for(cfg.seed, STREAM_PSI_INIT)
    if cfg.model == "fno":
        return FNO(cfg.operator, rng)
    return DONet(cfg.operator, grid, rng)


def build_phi(cfg: ExperimentConfig) -> PhiNet:
    return PhiNet(cfg.phi, rng_for(cfg.seed, STREAM_PHI_INIT))


def check_compatible(cfg: ExperimentConfig, ds: Dataset) -> None:
    if cfg.benchmark != ds.benchmark:
        raise ValidationError(f"config benchmark {cfg.benchmark!r} does not match data benchmark {ds.benchmark!r}")
    if tuple(cfg.grid) != ds.grid.shape:
        raise ValidationError(f"config grid {tuple(cfg.grid)} does not match data grid {ds.grid.shape}")
    if cfg.train_size > ds.n_train:
        raise ValidationError(f"train_size {cfg.train_size} exceeds the {ds.n_train} training pairs in the data")
    if ds.n_test < 1:
        raise ValidationError("data has no test samples")


def parameter_counts(psi: Module, phi: Module | None, method: str) -> dict:
    op = count_parameters(psi)
    extra = count_parameters(phi) if (phi is not None and method == "ppi") else 0
    return {"operator": op, "phi": extra, "total": op + extra}


def evaluator(ds: Dataset):
    def evaluate(model: Module) -> float:
        return relative_l2(predict(model, ds.f_test, ds.grid), ds.u_test)
    return evaluate


def pretrained_operator(cfg: ExperimentConfig, ds: Dataset) -> tuple[Module, Adam]:
    """The operator and its optimizer after the supervised pretraining stage of ``cfg``."""
    check_compatible(cfg, ds)
    f, u = ds.f_train[:cfg.train_size], ds.u_train[:cfg.train_size]
    psi = build_operator(cfg, ds.grid)
    psi.fit_normalization(f, u)
    psi_opt = Adam(psi.named_parameters(), lr=cfg.train.lr)
    pretrain_operator(psi, f, u, ds.grid, cfg.train.epochs, psi_opt)
    return psi, psi_opt


def run_experiment(cfg: ExperimentConfig, ds: Dataset, log=None, phi_factory=None, start=None) -> Run:
    """Train according to ``cfg`` on the first ``train_size`` pairs of ``ds``; wall time goes to ``log``.

    ``phi_factory(cfg)`` replaces the default physics network (used by the architecture sweep).
    ``start`` is a ``pretrained_operator`` result for a config that differs from ``cfg`` at most in
    method and fine-tuning settings; it is copied, so one pretraining can seed several methods.
    """
    check_compatible(cfg, ds)
    log = log or sys.stderr
    t0 = time.perf_counter()
    grid, tc = ds.grid, cfg.train
    f, u = ds.f_train[:cfg.train_size], ds.u_train[:cfg.train_size]
    evaluate = evaluator(ds)

    if start is None:
        psi, psi_opt = pretrained_operator(cfg, ds)
    else:
        psi, psi_opt = copy.deepcopy(start)

    phi, phi_opt = None, None
    if cfg.method == "ppi":
        phi = (phi_factory or build_phi)(cfg)
        phi.fit_normalization(u, f, grid)
        phi_opt = Adam(phi.named_parameters(), lr=tc.phi_lr)
        train_phi(phi, u, f, grid, tc.epochs, optimizer=phi_opt)
        state = alternate_finetune(psi, phi, f, u, grid, tc, cfg.benchmark, evaluate, psi_opt, phi_opt)
        phi.load_state_dict(state.best_phi)
    elif cfg.method == "pino":
        state = continue_training(psi, f, u, grid, tc, psi_opt, evaluate, pino_extra(psi, cfg.benchmark, grid, tc))
    else:
        state = continue_training(psi, f, u, grid, tc, psi_opt, evaluate)
    psi.load_state_dict(state.best_psi)

    report = make_report(cfg, ds, psi, phi, state)
    if state.aborted:
        print(f"training stopped early: {state.aborted}", file=log)
    print(f"{cfg.benchmark}/{cfg.model}/{cfg.method} seed={cfg.seed} wall_time={time.perf_counter() - t0:.1f}s",
          file=log)
    return Run(cfg, psi, phi, report, psi_opt, phi_opt)


def make_report(cfg: ExperimentConfig, ds: Dataset, psi: Module, phi: PhiNet | None, state: FinetuneState) -> Report:
    per_sample = relative_l2_per_sample(predict(psi, ds.f_test, ds.grid), ds.u_test)
    err = float(np.mean(per_sample))
    if cfg.method == "baseline":
        trace = [err]
    else:
        trace = [state.initial_error] + [float(e) for e in state.trace]
    best = list(np.minimum.accumulate(trace)) if trace else []
    phi_err = None
    if phi is not None:
        phi_err = relative_l2(predict(phi, ds.u_test, ds.grid), ds.f_test)
    return Report(
        benchmark=cfg.benchmark, model=cfg.model, method=cfg.method, train_size=cfg.train_size, seed=cfg.seed,
        relative_l2=err, trace=trace, best_trace=[float(b) for b in best],
        parameter_counts=parameter_counts(psi, phi, cfg.method),
        alternations_run=len(state.trace), phi_relative_l2=phi_err, per_sample=[float(p) for p in per_sample],
    )


# -- checkpoints ---------------------------------------------------------------------

def checkpoint_arrays(run: Run) -> dict[str, np.ndarray]:
    arrays = run.psi.state_dict(run.config.model + ".")
    if run.phi is not None:
        arrays.update(run.phi.state_dict("phi."))
    arrays.update(run.psi_opt.state_arrays("optim.psi"))
    if run.phi_opt is not None:
        arrays.update(run.phi_opt.state_arrays("optim.phi"))
    return arrays


def save_checkpoint(path, run: Run, phi_arch: str = "ours") -> str:
    meta = {"kind": "checkpoint", "config": run.config.to_dict(), "phi_arch": phi_arch,
            "relative_l2": run.report.relative_l2}
    return container.write(path, meta, checkpoint_arrays(run))


def load_checkpoint(path, grid: GridSpec) -> tuple[ExperimentConfig, Module, Module | None]:
    """Rebuild the trained networks for data on ``grid``."""
    meta, arrays = container.read(path)
    if meta.get("kind") != "checkpoint":
        raise ValidationError(f"{path} is not a checkpoint container")
    cfg = ExperimentConfig.from_dict(meta["config"])
    if tuple(cfg.grid) != grid.shape:
        raise ValidationError(f"checkpoint was built for grid {tuple(cfg.grid)}, data grid is {grid.shape}")
    psi = build_operator(cfg, grid)
    psi_state = {k: v for k, v in arrays.items() if k.startswith(cfg.model + ".")}
    try:
        psi.load_state_dict(psi_state, cfg.model + ".")
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"checkpoint does not match its configured architecture: {exc}") from exc
    phi = None
    phi_state = {k: v for k, v in arrays.items() if k.startswith("phi.")}
    if phi_state:
        if meta.get("phi_arch") == "operator":
            from .ablation import operator_phi_factory
            phi = operator_phi_factory(cfg)
        else:
            phi = build_phi(cfg)
        try:
            phi.load_state_dict(phi_state, "phi.")
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"checkpoint physics network does not match its configuration: {exc}") from exc
    return cfg, psi, phi
