"""Parameter containers and the basic layers built on the primitives."""
from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes to find parameters, buffers and submodules.

    Attribute insertion order defines parameter order, which the checkpoint
    format relies on.
    """

    training: bool = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, ops.BatchNormStats):
                yield prefix + name + ".mean", value, "mean"
                yield prefix + name + ".var", value, "var"
        for name, child in self._children():
            yield from child.named_buffers(prefix + name + ".")

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def state_arrays(self) -> dict:
        """All parameters and buffers as name -> array (copies)."""
        out = {name: p.data.copy() for name, p in self.named_parameters()}
        for name, stats, attr in self.named_buffers():
            out[name] = getattr(stats, attr).copy()
        return out

    def load_arrays(self, arrays: dict, strict: bool = True) -> list:
        """Replace parameters/buffers by value; returns the names that matched."""
        loaded = []
        params = dict(self.named_parameters())
        buffers = {name: (stats, attr) for name, stats, attr in self.named_buffers()}
        for name, arr in arrays.items():
            if name in params:
                p = params[name]
                if p.shape != np.shape(arr):
                    if strict:
                        raise ValueError(f"{name}: shape {np.shape(arr)} != {p.shape}")
                    continue
                p.data = np.array(arr, dtype=np.float64)
                loaded.append(name)
            elif name in buffers:
                stats, attr = buffers[name]
                setattr(stats, attr, np.array(arr, dtype=np.float64))
                loaded.append(name)
            elif strict:
                raise KeyError(f"unexpected tensor {name}")
        if strict:
            missing = (set(params) | set(buffers)) - set(loaded)
            if missing:
                raise KeyError(f"missing tensors: {sorted(missing)}")
        return loaded


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.W = Tensor(uniform_init(rng, (n_in, n_out), n_in), requires_grad=True)
        self.b = Tensor(uniform_init(rng, (n_out,), n_in), requires_grad=True) if bias else None

    def forward(self, x):
        return ops.linear(x, self.W, self.b)


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(width), requires_grad=True)
        self.beta = Tensor(np.zeros(width), requires_grad=True)
        self.eps = eps

    def forward(self, x):
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.stats = ops.BatchNormStats(channels, momentum)
        self.eps = eps

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.stats, self.training, self.eps)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator):
        fan_in = c_in * k * k
        self.K = Tensor(uniform_init(rng, (c_out, c_in, k, k), fan_in), requires_grad=True)
        self.b = Tensor(uniform_init(rng, (c_out,), fan_in), requires_grad=True)

    def forward(self, x):
        return ops.conv2d(x, self.K, self.b)


def dropout(x, p: float, rng: Optional[np.random.Generator], train: bool):
    return ops.dropout(x, p, rng, train)
