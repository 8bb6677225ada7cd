"""Central finite-difference checks of taped gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, index: tuple, h: float) -> float:
    orig = t.data[index]
    t.data[index] = orig + h
    fp = fn().item()
    t.data[index] = orig - h
    fm = fn().item()
    t.data[index] = orig
    return (fp - fm) / (2.0 * h)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-5,
                    max_per_tensor: int | None = 40, rng: np.random.Generator | None = None,
                    floor: float = 1e-8) -> float:
    """Max elementwise relative error between taped and central-difference gradients.

    ``fn`` must build a scalar loss from ``tensors`` deterministically. When a
    tensor has more than ``max_per_tensor`` entries a random subset is checked.
    ``floor`` bounds the denominator so entries whose true gradient is zero do
    not turn roundoff (about ``eps * |loss| / h``) into a large relative error.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.data = np.array(t.data, dtype=np.float64)  # writable private copy
    with Tape() as tape:
        loss = fn()
    grads = backward(loss, tape)
    worst = 0.0
    for t in tensors:
        g = grads.get(t.id, np.zeros_like(t.data))
        flat = np.arange(t.size)
        if max_per_tensor is not None and t.size > max_per_tensor:
            flat = rng.choice(t.size, size=max_per_tensor, replace=False)
        for f in flat:
            idx = np.unravel_index(int(f), t.shape)
            num = numeric_grad(fn, t, idx, h)
            worst = max(worst, float(relative_error(np.asarray(g[idx]), np.asarray(num), floor)))
    return worst
