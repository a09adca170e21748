"""Parameter containers and the small set of layers the models need."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .engine import DTYPE, Tensor, as_tensor


class Module:
    """Tracks parameters, buffers and submodules by attribute name, in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.is_leaf and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value) -> None:
        arr = np.array(value, dtype=DTYPE)
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def set_buffer(self, name: str, value) -> None:
        self._buffers[name][...] = value

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {prefix + k: v for k, v in self._params.items()}
        for name, mod in self._modules.items():
            out.update(mod.named_parameters(f"{prefix}{name}."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self._buffers.items()}
        for name, mod in self._modules.items():
            out.update(mod.named_buffers(f"{prefix}{name}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {k: v.data.copy() for k, v in self.named_parameters(prefix).items()}
        out.update({k: v.copy() for k, v in self.named_buffers(prefix).items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.named_parameters(prefix)
        buffers = self.named_buffers(prefix)
        expected = set(params) | set(buffers)
        given = {k for k in state if k.startswith(prefix)}
        if given != expected:
            missing, extra = sorted(expected - given), sorted(given - expected)
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {state[k].shape} vs {p.shape}")
            p.data[...] = state[k]
        for k, b in buffers.items():
            b[...] = state[k]

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._modules)), module)

    def __iter__(self) -> Iterator[Module]:
        return iter(self._modules.values())

    def __len__(self) -> int:
        return len(self._modules)

    def __getitem__(self, i: int) -> Module:
        return list(self._modules.values())[i]


def _uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear(Module):
    """``x @ W + b`` along the last axis."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _uniform(rng, (n_in, n_out), bound)
        self.bias = _uniform(rng, (n_out,), bound)

    def forward(self, x):
        return ops.matmul(x, self.weight) + self.bias


class ChannelLinear(Module):
    """Location-wise linear map over the channel axis of a (B, C, ...) array."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(n_in)
        self.weight = _uniform(rng, (n_out, n_in), bound)
        self.bias = _uniform(rng, (n_out, 1), bound)

    def forward(self, x):
        x = as_tensor(x)
        B, C, *spatial = x.shape
        y = ops.matmul(self.weight, ops.reshape(x, (B, C, -1))) + self.bias
        return ops.reshape(y, (B, self.weight.shape[0], *spatial))


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel_size: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(c_in * kernel_size * kernel_size)
        self.weight = _uniform(rng, (c_out, c_in, kernel_size, kernel_size), bound)
        self.bias = _uniform(rng, (c_out,), bound) if bias else None

    def forward(self, x):
        return ops.conv2d_same(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.weight = Tensor(np.ones(channels), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        return ops.batch_norm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                                training=self.training, momentum=self.momentum, eps=self.eps)


class MLP(ModuleList):
    """Stack of :class:`Linear` layers with an activation between them (none after the last)."""

    def __init__(self, sizes: list[int], activation: str, rng: np.random.Generator):
        super().__init__([Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])])
        self.activation = activation

    def forward(self, x):
        act = ops.ACTIVATIONS[self.activation]
        n = len(self)
        for i, layer in enumerate(self):
            x = layer(x)
            if i < n - 1:
                x = act(x)
        return x
