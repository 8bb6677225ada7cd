"""Convolutional encoder turning a binary microcell image into a short descriptor."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .ndcore import BatchNorm, Conv2d, Linear, Module, Tensor, ops


@dataclass(frozen=True)
class ConvNetConfig:
    input_size: int = 32
    channels: tuple = (16, 32, 64, 64, 128)
    kernels: tuple = (5, 3, 3, 3, 3)
    pool_after: tuple = (1, 4)          # zero-based block indices followed by 2x2 max pooling
    bn_blocks: tuple = (0, 1, 4)        # blocks carrying batch norm
    hidden: tuple = (2048, 1024)
    out_features: int = 3
    dropout: float = 0.3

    def __post_init__(self):
        if len(self.channels) != len(self.kernels):
            raise ValueError("channels and kernels must have the same length")
        if self.input_size % (2 ** len(self.pool_after)):
            raise ValueError("input size must survive every pooling stage")

    @property
    def flat_features(self) -> int:
        side = self.input_size // 2 ** len(self.pool_after)
        return self.channels[-1] * side * side

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ConvNetConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# narrow variant with the same layer sequence, for finite-difference checks
SMALL_CONVNET = ConvNetConfig(input_size=8, channels=(2, 3, 3, 3, 4), hidden=(6, 5))


class ConvBlock(Module):
    def __init__(self, c_in: int, c_out: int, k: int, norm: bool, pool: bool,
                 rng: np.random.Generator):
        self.conv = Conv2d(c_in, c_out, k, rng)
        self.bn = BatchNorm(c_out) if norm else None
        self.pool = pool

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        x = ops.relu(x)
        return ops.maxpool2d(x) if self.pool else x


class ConvNet(Module):
    def __init__(self, config: ConvNetConfig = ConvNetConfig(),
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.config = config
        c_in = 1
        self.blocks = []
        for i, (c, k) in enumerate(zip(config.channels, config.kernels)):
            self.blocks.append(ConvBlock(c_in, c, k, i in config.bn_blocks,
                                         i in config.pool_after, rng))
            c_in = c
        widths = (config.flat_features, *config.hidden)
        self.fcs = [Linear(a, b, rng) for a, b in zip(widths, widths[1:])]
        self.head = Linear(widths[-1], config.out_features, rng)
        self.out_bn = BatchNorm(config.out_features)

    def forward(self, images, rng: Optional[np.random.Generator] = None):
        """``images``: ``[N, S, S]`` (or ``[S, S]``) with values in {0, 1}."""
        x = images if isinstance(images, Tensor) else Tensor(images)
        single = x.ndim == 2
        s = self.config.input_size
        if x.shape[-2:] != (s, s) or x.ndim not in (2, 3):
            raise ValueError(f"expected {s}x{s} images, got shape {x.shape}")
        h = ops.reshape(x, (-1, 1, s, s))
        for block in self.blocks:
            h = block(h)
        h = ops.reshape(h, (h.shape[0], -1))
        for fc in self.fcs:
            h = ops.dropout(ops.relu(fc(h)), self.config.dropout, rng, self.training)
        out = self.out_bn(self.head(h))
        return ops.reshape(out, (self.config.out_features,)) if single else out


def prepare_image(pixels) -> np.ndarray:
    """Map 8-bit grey values (fiber 255, matrix 0) or 0/1 cells to {0, 1} floats."""
    a = np.asarray(pixels)
    return (a >= 128).astype(np.float64) if a.max(initial=0) > 1 else a.astype(np.float64)


def cnn_forward(net: ConvNet, images, mode: str = "eval",
                rng: Optional[np.random.Generator] = None) -> Tensor:
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    net.train(mode == "train")
    return net(prepare_image(images), rng=rng)


def cnn_param_count(net_or_config) -> int:
    if isinstance(net_or_config, ConvNetConfig):
        net_or_config = ConvNet(net_or_config)
    return net_or_config.num_parameters()
