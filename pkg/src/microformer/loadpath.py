"""Random-walk and cyclic loading paths built from right stretch increments."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RANDOM_BOUNDS = (5e-5, 2.5e-3)
CYCLIC_BOUNDS = (5e-4, 2.5e-3)
STRETCH_CAP = 0.05
MAX_STEPS = 100
TURN_RANGE = (0.01, 0.05)
CYCLIC_MODES = ("uniaxial-x", "uniaxial-y", "biaxial", "shear")

_S2 = 1.0 / math.sqrt(2.0)
# unit-eigenvalue-norm loading directions per cyclic mode
_DIRECTIONS = {
    "uniaxial-x": np.array([[1.0, 0.0], [0.0, 0.0]]),
    "uniaxial-y": np.array([[0.0, 0.0], [0.0, 1.0]]),
    "biaxial": np.array([[_S2, 0.0], [0.0, _S2]]),
    "shear": np.array([[0.0, _S2], [_S2, 0.0]]),
}


def random_increment(rng: np.random.Generator, r_min: float, r_max: float, *,
                     alpha: float | None = None, R: float | None = None,
                     theta: float | None = None) -> np.ndarray:
    """Symmetric stretch increment with eigenvalue norm in ``[r_min, r_max]``.

    Keyword overrides pin individual draws (the rng is still advanced).
    """
    if not 0.0 < r_min < r_max:
        raise ValueError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
    a = rng.uniform(0.0, math.pi)
    r = rng.uniform(r_min ** 2, r_max ** 2)
    t = rng.uniform(0.0, 2.0 * math.pi)
    a = a if alpha is None else alpha
    r = r if R is None else R
    t = t if theta is None else theta
    n1 = np.array([math.cos(a), math.sin(a)])
    n2 = np.array([-math.sin(a), math.cos(a)])
    l1 = math.sqrt(r) * math.cos(t)
    l2 = math.sqrt(r) * math.sin(t)
    return l1 * np.outer(n1, n1) + l2 * np.outer(n2, n2)


def step_norm(dU: np.ndarray) -> float:
    """Eigenvalue norm of a symmetric increment, i.e. its Frobenius norm."""
    return float(np.sqrt((np.asarray(dU) ** 2).sum()))


@dataclass
class StretchPath:
    U: np.ndarray  # (n + 1, 2, 2), U[0] = I
    kind: str = "random"
    mode: str | None = None

    def __len__(self):
        return len(self.U) - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.U, axis=0)

    def strain(self) -> np.ndarray:
        """Green-Lagrange ``(E_xx, E_yy, E_xy)`` for ``U_1 .. U_n``."""
        return green_lagrange(self.U[1:]).reshape(-1, 3)


def _check_steps(n_steps: int):
    if not 1 <= n_steps <= MAX_STEPS:
        raise ValueError(f"n_steps must lie in [1, {MAX_STEPS}], got {n_steps}")


def random_path(rng: np.random.Generator, n_steps: int = MAX_STEPS,
                r_min: float = RANDOM_BOUNDS[0], r_max: float = RANDOM_BOUNDS[1],
                cap: float = STRETCH_CAP, max_tries: int = 100) -> StretchPath:
    """Random walk ``U_n = U_{n-1} + dU_n``.

    Increments pushing any component of ``U - I`` beyond ``cap`` are redrawn;
    after ``max_tries`` failures the path ends early.
    """
    _check_steps(n_steps)
    eye = np.eye(2)
    U = [eye]
    for _ in range(n_steps):
        for _ in range(max_tries):
            cand = U[-1] + random_increment(rng, r_min, r_max)
            if np.abs(cand - eye).max() <= cap:
                U.append(cand)
                break
        else:
            break
    return StretchPath(np.array(U), "random")


def cyclic_path(rng: np.random.Generator, mode: str | None = None, n_steps: int = MAX_STEPS,
                r_min: float = CYCLIC_BOUNDS[0], r_max: float = CYCLIC_BOUNDS[1],
                turn_range: tuple = TURN_RANGE) -> StretchPath:
    """Load-unload-reload path along a fixed direction.

    The loaded component reverses direction before it would pass a turning
    amplitude drawn uniformly from ``turn_range``; a fresh amplitude is drawn
    after every reversal.
    """
    _check_steps(n_steps)
    if mode is None:
        mode = CYCLIC_MODES[int(rng.integers(len(CYCLIC_MODES)))]
    if mode not in _DIRECTIONS:
        raise ValueError(f"unknown cyclic mode {mode!r}; choose from {CYCLIC_MODES}")
    D = _DIRECTIONS[mode]
    dmax = float(np.abs(D).max())
    sign = 1.0 if rng.random() < 0.5 else -1.0
    turn = rng.uniform(*turn_range)
    amp = 0.0
    U = [np.eye(2)]
    for _ in range(n_steps):
        delta = math.sqrt(rng.uniform(r_min ** 2, r_max ** 2))
        if abs((amp + sign * delta) * dmax) > turn:
            sign = -sign
            turn = rng.uniform(*turn_range)
        amp += sign * delta
        U.append(np.eye(2) + amp * D)
    return StretchPath(np.array(U), "cyclic", mode)


def green_lagrange(U: np.ndarray) -> np.ndarray:
    """``E = (U^2 - I) / 2`` with ``F = U`` (no rotation); returns ``(E_xx, E_yy, E_xy)``.

    Accepts one 2x2 tensor or a stack; raises for non-SPD input.
    """
    U = np.asarray(U, dtype=np.float64)
    single = U.ndim == 2
    Us = U[None] if single else U
    if Us.shape[-2:] != (2, 2):
        raise ValueError(f"expected 2x2 stretch tensors, got {U.shape}")
    if not np.allclose(Us, np.swapaxes(Us, -1, -2), rtol=0, atol=1e-12):
        raise ValueError("stretch tensor must be symmetric")
    if (np.linalg.eigvalsh(Us) <= 0).any():
        raise ValueError("stretch tensor must be positive definite")
    E = 0.5 * (Us @ Us - np.eye(2))
    out = np.stack([E[:, 0, 0], E[:, 1, 1], E[:, 0, 1]], axis=-1)
    return out[0] if single else out
