"""Experiment configuration: a JSON document with a fixed set of keys, parsed strictly."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .benchmarks import check_benchmark
from .errors import ValidationError
from .grid import MIN_EXTENT
from .operators import PINO_BENCHMARKS, DonetConfig, FnoConfig
from .phi import PhiConfig
from .training import TrainConfig

MODELS = ("fno", "donet")
METHODS = ("baseline", "ppi", "pino")
KEYS = ("benchmark", "model", "method", "train_size", "grid", "seed", "phi", "operator", "train")


def _build(cls, data, where: str):
    """Instantiate a config dataclass from a dict, rejecting unknown keys."""
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ValidationError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    benchmark: str
    model: str = "fno"
    method: str = "ppi"
    train_size: int = 10
    grid: int | tuple[int, int] = 64
    seed: int = 0
    phi: PhiConfig = field(default_factory=PhiConfig)
    operator: FnoConfig | DonetConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        check_benchmark(self.benchmark)
        if self.model not in MODELS:
            raise ValidationError(f"model must be one of {', '.join(MODELS)}, got {self.model!r}")
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.method == "pino" and self.benchmark not in PINO_BENCHMARKS:
            raise ValidationError(f"method 'pino' supports only {', '.join(PINO_BENCHMARKS)}, "
                                  f"not {self.benchmark!r}")
        if not isinstance(self.train_size, int) or self.train_size < 1:
            raise ValidationError(f"train_size must be a positive integer, got {self.train_size!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        g = self.grid
        shape = (g, g) if isinstance(g, int) else tuple(g)
        if len(shape) != 2 or not all(isinstance(n, int) and n >= MIN_EXTENT for n in shape):
            raise ValidationError(f"grid extents must be integers >= {MIN_EXTENT}, got {g!r}")
        self.grid = shape
        self.phi = _build(PhiConfig, self.phi, "phi")
        op_cls = FnoConfig if self.model == "fno" else DonetConfig
        if self.operator is None:
            self.operator = op_cls(branch="conv") if self.benchmark == "darcy" and self.model == "donet" else op_cls()
        self.operator = _build(op_cls, self.operator, "operator")
        if self.model == "fno" and 2 * self.operator.modes > min(shape):
            raise ValidationError(f"{self.operator.modes} modes need a grid of at least {2 * self.operator.modes}")
        self.train = _build(TrainConfig, self.train, "train")
        if self.train.seed != self.seed:
            self.train = dataclasses.replace(self.train, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "model": self.model,
            "method": self.method,
            "train_size": self.train_size,
            "grid": list(self.grid),
            "seed": self.seed,
            "phi": self.phi.to_dict(),
            "operator": self.operator.to_dict(),
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ValidationError("experiment config must be a JSON object")
        unknown = sorted(set(data) - set(KEYS))
        if unknown:
            raise ValidationError(f"unknown key(s) in config: {', '.join(unknown)}")
        missing = [k for k in KEYS if k not in data]
        if missing:
            raise ValidationError(f"missing key(s) in config: {', '.join(missing)}")
        train = data["train"]
        if isinstance(train, dict) and "seed" in train and train["seed"] != data["seed"]:
            raise ValidationError("train.seed disagrees with the experiment seed")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ValidationError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(data)
