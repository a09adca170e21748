"""Regular vertex-centered 2-D grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

MIN_EXTENT = 8


@dataclass(frozen=True)
class GridSpec:
    """``shape`` nodes over the box ``bounds``; nodes include both endpoints of each axis."""

    shape: tuple[int, int]
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 1.0), (0.0, 1.0))

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        if len(shape) != 2 or len(bounds) != 2:
            raise ValidationError(f"grid must be 2-D, got shape {self.shape} and bounds {self.bounds}")
        if min(shape) < MIN_EXTENT:
            raise ValidationError(f"grid extents must be at least {MIN_EXTENT}, got {shape}")
        for lo, hi in bounds:
            if not hi > lo:
                raise ValidationError(f"empty domain interval [{lo}, {hi}]")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def square(cls, n: int, lo: float = 0.0, hi: float = 1.0) -> "GridSpec":
        return cls((n, n), ((lo, hi), (lo, hi)))

    @property
    def spacing(self) -> tuple[float, float]:
        return tuple((hi - lo) / (n - 1) for n, (lo, hi) in zip(self.shape, self.bounds))

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.linspace(lo, hi, n) for n, (lo, hi) in zip(self.shape, self.bounds))

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def unit_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates rescaled to [0, 1] per axis."""
        return tuple(np.meshgrid(*(np.linspace(0.0, 1.0, n) for n in self.shape), indexing="ij"))

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "bounds": [list(b) for b in self.bounds]}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["shape"]), tuple(tuple(b) for b in d["bounds"]))
