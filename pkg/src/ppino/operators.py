"""Operator models f -> u: Fourier neural operator and DeepONet, plus the PDE-residual
penalty used by the physics-informed FNO baseline."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .derivatives import fd_stack
from .errors import ValidationError
from .grid import GridSpec
from .phi import coord_channels
from .tensor import (MLP, BatchNorm2d, ChannelLinear, Conv2d, Linear, Module, ModuleList, Tensor, as_tensor,
                     no_grad, ops)


def _normalize_input(f, mean: np.ndarray, std: np.ndarray) -> Tensor:
    return (as_tensor(f) - mean) * (1.0 / std)


# -- FNO ---------------------------------------------------------------------------

@dataclass
class FnoConfig:
    modes: int = 12
    width: int = 32
    layers: int = 4
    proj_width: int = 128
    activation: str = "gelu"
    coords: bool = True

    def __post_init__(self):
        if self.modes < 1 or self.width < 1 or self.layers < 1 or self.proj_width < 1:
            raise ValidationError("FNO modes, width, layers and proj_width must be positive")
        if self.activation not in ops.ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class FourierLayer(Module):
    """``W h + K h`` where K multiplies the two retained corner blocks of the spectrum."""

    def __init__(self, width: int, modes: int, rng: np.random.Generator):
        super().__init__()
        self.modes = modes
        scale = 1.0 / (width * width)
        # rows 0..modes-1 hold the positive-frequency corner, rows modes..2*modes-1 the negative one
        self.spectral = Tensor(scale * rng.uniform(size=(width, width, 2 * modes, modes, 2)), requires_grad=True)
        self.pointwise = ChannelLinear(width, width, rng)

    def forward(self, h):
        H, W = h.shape[-2:]
        z = ops.rfft2_modes(h, self.modes, self.modes)
        k = ops.irfft2_modes(ops.mode_mix(z, self.spectral), (H, W))
        return k + self.pointwise(h)


class FNO(Module):
    def __init__(self, cfg: FnoConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.lift = ChannelLinear(3 if cfg.coords else 1, cfg.width, rng)
        self.fourier = ModuleList([FourierLayer(cfg.width, cfg.modes, rng) for _ in range(cfg.layers)])
        self.proj1 = ChannelLinear(cfg.width, cfg.proj_width, rng)
        self.proj2 = ChannelLinear(cfg.proj_width, 1, rng)
        self.register_buffer("in_mean", np.zeros(1))
        self.register_buffer("in_std", np.ones(1))
        self.register_buffer("out_mean", np.zeros(1))
        self.register_buffer("out_std", np.ones(1))

    def check_grid(self, shape) -> None:
        H, W = shape
        m = self.cfg.modes
        if 2 * m > H or 2 * m > W:
            raise ValidationError(f"grid {H}x{W} too small for {m} retained modes (need at least {2 * m})")

    def forward(self, f, grid: GridSpec | None = None) -> Tensor:
        """f: (B, H, W) -> u: (B, H, W)."""
        f = as_tensor(f)
        if f.ndim == 2:
            f = ops.reshape(f, (1, *f.shape))
        B, H, W = f.shape
        self.check_grid((H, W))
        act = ops.ACTIVATIONS[self.cfg.activation]
        x = ops.reshape(_normalize_input(f, self.in_mean, self.in_std), (B, 1, H, W))
        if self.cfg.coords:
            xy = np.stack(np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij"))
            x = ops.concat([x, np.broadcast_to(xy, (B, 2, H, W))], axis=1)
        h = self.lift(x)
        n = len(self.fourier)
        for i, layer in enumerate(self.fourier):
            h = layer(h)
            if i < n - 1:
                h = act(h)
        y = self.proj2(act(self.proj1(h)))
        return ops.reshape(y, (B, H, W)) * self.out_std + self.out_mean

    def fit_normalization(self, f: np.ndarray, u: np.ndarray) -> None:
        self.set_buffer("in_mean", [f.mean()])
        self.set_buffer("in_std", [max(f.std(), 1e-12)])
        self.set_buffer("out_mean", [u.mean()])
        self.set_buffer("out_std", [max(u.std(), 1e-12)])


# -- DeepONet ----------------------------------------------------------------------

@dataclass
class DonetConfig:
    branch: str = "mlp"              # "mlp" on the flattened input, or "conv"
    depth: int = 3                   # linear layers in the MLP branch
    width: int = 60
    conv_layers: int = 3
    conv_channels: list[int] = field(default_factory=lambda: [16, 32, 64])
    trunk_depth: int = 3
    trunk_width: int = 60
    p: int = 60
    activation: str = "relu"

    def __post_init__(self):
        if self.branch not in ("mlp", "conv"):
            raise ValidationError(f"DONet branch must be 'mlp' or 'conv', got {self.branch!r}")
        if min(self.depth, self.width, self.conv_layers, self.trunk_depth, self.trunk_width, self.p) < 1:
            raise ValidationError("DONet sizes must be positive")
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise ValidationError("DONet conv_channels must be non-empty and positive")
        if self.activation not in ops.ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class ConvBranch(Module):
    """conv3x3 -> batch norm -> leaky ReLU blocks, 2x2 pooling while the map is >= 16 wide, then linear."""

    def __init__(self, shape: tuple[int, int], cfg: DonetConfig, rng: np.random.Generator):
        super().__init__()
        chans = [1] + [cfg.conv_channels[min(i, len(cfg.conv_channels) - 1)] for i in range(cfg.conv_layers)]
        self.convs = ModuleList([Conv2d(a, b, 3, rng) for a, b in zip(chans[:-1], chans[1:])])
        self.norms = ModuleList([BatchNorm2d(b) for b in chans[1:]])
        H, W = shape
        self.pool = []
        for _ in range(cfg.conv_layers):
            do = H >= 16 and W >= 16 and H % 2 == 0 and W % 2 == 0
            self.pool.append(do)
            if do:
                H, W = H // 2, W // 2
        self.out = Linear(chans[-1] * H * W, cfg.p, rng)

    def forward(self, x):
        for conv, norm, pool in zip(self.convs, self.norms, self.pool):
            x = ops.leaky_relu(norm(conv(x)))
            if pool:
                x = ops.avg_pool2(x)
        return self.out(ops.reshape(x, (x.shape[0], -1)))


class DONet(Module):
    def __init__(self, cfg: DonetConfig, grid: GridSpec, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.grid = grid
        H, W = grid.shape
        if cfg.branch == "mlp":
            self.branch = MLP([H * W] + [cfg.width] * (cfg.depth - 1) + [cfg.p], cfg.activation, rng)
        else:
            self.branch = ConvBranch((H, W), cfg, rng)
        self.trunk = MLP([2] + [cfg.trunk_width] * (cfg.trunk_depth - 1) + [cfg.p], cfg.activation, rng)
        self.register_buffer("in_mean", np.zeros(1))
        self.register_buffer("in_std", np.ones(1))
        self.register_buffer("out_scale", np.ones(1))

    def branch_features(self, f) -> Tensor:
        f = as_tensor(f)
        if f.ndim == 2:
            f = ops.reshape(f, (1, *f.shape))
        if f.shape[1:] != self.grid.shape:
            raise ValidationError(f"DONet expects {self.grid.shape[0] * self.grid.shape[1]} sensors "
                                  f"on a {self.grid.shape} grid, got input {f.shape[1:]}")
        B = f.shape[0]
        x = _normalize_input(f, self.in_mean, self.in_std)
        if self.cfg.branch == "mlp":
            return self.branch(ops.reshape(x, (B, -1)))
        return self.branch(ops.reshape(x, (B, 1, *self.grid.shape)))

    def unit_queries(self, query=None) -> np.ndarray:
        if query is None:
            return coord_channels(self.grid).reshape(2, -1).T
        q = np.asarray(query, dtype=float)
        lo = np.array([b[0] for b in self.grid.bounds])
        hi = np.array([b[1] for b in self.grid.bounds])
        return (q - lo) / (hi - lo)

    def forward(self, f, grid: GridSpec | None = None, query=None) -> Tensor:
        """Predictions at ``query`` (Q, 2) physical points, or on the full grid as (B, H, W)."""
        b = self.branch_features(f)
        t = self.trunk(self.unit_queries(query))
        y = ops.matmul(b, ops.transpose(t, (1, 0))) * self.out_scale
        if query is None:
            return ops.reshape(y, (b.shape[0], *self.grid.shape))
        return y

    def fit_normalization(self, f: np.ndarray, u: np.ndarray) -> None:
        self.set_buffer("in_mean", [f.mean()])
        self.set_buffer("in_std", [max(f.std(), 1e-12)])
        self.set_buffer("out_scale", [max(np.sqrt(np.mean(u * u)), 1e-12)])


# -- accounting and physics residuals ------------------------------------------------

def count_parameters(*models: Module) -> int:
    """Total trainable scalars; a complex weight counts as two."""
    return int(sum(m.num_parameters() for m in models))


PINO_BENCHMARKS = ("poisson", "advection")


def pino_residual(u_pred, f, benchmark: str, grid: GridSpec) -> Tensor:
    """Mean squared PDE residual over interior nodes (second-order stencils).

    poisson: ``-(u_11 + u_22) - f``; advection: ``u_t + u_x - f`` with axis 0 = x, axis 1 = t.
    """
    if benchmark not in PINO_BENCHMARKS:
        raise ValidationError(f"PDE residual is available for {', '.join(PINO_BENCHMARKS)}, not {benchmark!r}")
    s = fd_stack(u_pred, grid, 2)
    f = np.asarray(f)
    if f.ndim == 2:
        f = f[None]
    if benchmark == "poisson":
        r = -(s[:, 3] + s[:, 4]) - f
    else:
        r = s[:, 1] + s[:, 2] - f
    return ops.mean(ops.square(r[:, 1:-1, 1:-1]))


def predict(model: Module, f: np.ndarray, grid: GridSpec | None = None, chunk: int = 16) -> np.ndarray:
    """Inference in fixed-size chunks (batch norm in eval mode); the chunking is deterministic."""
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            outs = [model(f[i:i + chunk], grid).data for i in range(0, len(f), chunk)]
    finally:
        model.train(was_training)
    return np.concatenate(outs)
