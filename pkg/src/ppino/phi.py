"""The pseudo-physics network: a cross-channel convolution over the derivative stack
followed by a location-wise MLP that predicts the source field."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .derivatives import ORDER_CHANNELS, fd_stack
from .errors import DivergenceError, ValidationError
from .grid import GridSpec
from .tensor import MLP, Adam, Conv2d, Module, Tensor, as_tensor, backward, no_grad, ops


@dataclass
class PhiConfig:
    kernel_size: int = 5
    depth: int = 4          # number of linear layers in the MLP
    width: int = 64
    activation: str = "gelu"
    order: int = 2
    coords: bool = True
    use_conv: bool = True
    widen: int = 1          # conv output channels = widen * input channels

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"phi kernel_size must be odd and positive, got {self.kernel_size}")
        if self.depth < 1 or self.width < 1 or self.widen < 1:
            raise ValidationError("phi depth, width and widen must be positive")
        if self.order not in ORDER_CHANNELS:
            raise ValidationError(f"phi order must be in 0..3, got {self.order}")
        if self.activation not in ops.ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def in_channels(self) -> int:
        return ORDER_CHANNELS[self.order] + (2 if self.coords else 0)


def coord_channels(grid: GridSpec) -> np.ndarray:
    """(2, H, W) node coordinates normalized to [0, 1]."""
    return np.stack(grid.unit_mesh())


class PhiNet(Module):
    def __init__(self, cfg: PhiConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c = cfg.in_channels
        hidden = c * cfg.widen if cfg.use_conv else c
        if cfg.use_conv:
            self.conv = Conv2d(c, hidden, cfg.kernel_size, rng)
        self.mlp = MLP([hidden] + [cfg.width] * (cfg.depth - 1) + [1], cfg.activation, rng)
        self.register_buffer("in_mean", np.zeros(c))
        self.register_buffer("in_std", np.ones(c))
        self.register_buffer("out_mean", np.zeros(1))
        self.register_buffer("out_std", np.ones(1))

    def features(self, u, grid: GridSpec) -> Tensor:
        """Derivative stack of u, plus coordinate channels when enabled: (B, C, H, W)."""
        s = fd_stack(u, grid, self.cfg.order)
        if self.cfg.coords:
            B = s.shape[0]
            xy = np.broadcast_to(coord_channels(grid), (B, 2, *grid.shape))
            s = ops.concat([s, xy], axis=1)
        return s

    def forward_features(self, x) -> Tensor:
        x = as_tensor(x)
        B, C, H, W = x.shape
        if C != self.cfg.in_channels:
            raise ValidationError(f"phi expects {self.cfg.in_channels} input channels, got {C}")
        x = (x - self.in_mean.reshape(1, -1, 1, 1)) * (1.0 / self.in_std).reshape(1, -1, 1, 1)
        if self.cfg.use_conv:
            x = self.conv(x)
        h = ops.transpose(x, (0, 2, 3, 1))
        y = self.mlp(h)
        return ops.reshape(y, (B, H, W)) * self.out_std + self.out_mean

    def forward(self, u, grid: GridSpec) -> Tensor:
        return self.forward_features(self.features(u, grid))

    def fit_normalization(self, u: np.ndarray, f: np.ndarray, grid: GridSpec) -> None:
        with no_grad():
            x = self.features(u, grid).data
        self.set_buffer("in_mean", x.mean(axis=(0, 2, 3)))
        self.set_buffer("in_std", np.maximum(x.std(axis=(0, 2, 3)), 1e-8))
        self.set_buffer("out_mean", [f.mean()])
        self.set_buffer("out_std", [max(f.std(), 1e-8)])


def phi_loss(net, u, f, grid: GridSpec) -> Tensor:
    """Mean over samples and grid nodes of (phi(u) - f)^2."""
    f = np.asarray(f)
    if len(f) == 0:
        raise ValidationError("phi_loss needs at least one sample")
    return ops.mean(ops.square(net(u, grid) - f))


def train_phi(net, u: np.ndarray, f: np.ndarray, grid: GridSpec, epochs: int = 500, lr: float = 1e-3,
              optimizer: Adam | None = None) -> list[float]:
    """Full-batch Adam on :func:`phi_loss`; returns the loss before each step."""
    if len(u) < 1:
        raise ValidationError("train_phi needs at least one training pair")
    opt = optimizer or Adam(net.named_parameters(), lr=lr)
    trace: list[float] = []
    for _ in range(epochs):
        opt.zero_grad()
        loss = phi_loss(net, u, f, grid)
        value = loss.item()
        trace.append(value)
        if not np.isfinite(value) or value > 1e3 * trace[0]:
            raise DivergenceError(f"phi training diverged at epoch {len(trace) - 1} (loss {value:.3e})", trace)
        backward(loss)
        opt.step()
    return trace
