"""Ground-truth stress generators for plane strain.

Strains are triples ``(xx, yy, xy)`` with tensor (not engineering) shear;
stresses are quadruples ``(xx, yy, zz, xy)`` in MPa.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass(frozen=True)
class MaterialParams:
    E: float
    nu: float
    sigma_y: float | None = None

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {self.nu}")
        if self.sigma_y is not None and not self.sigma_y > 0:
            raise ValueError(f"yield stress must be positive, got {self.sigma_y}")

    @property
    def lame(self) -> tuple[float, float]:
        lam = self.E * self.nu / ((1.0 + self.nu) * (1.0 - 2.0 * self.nu))
        mu = self.E / (2.0 * (1.0 + self.nu))
        return lam, mu

    @property
    def yield_stress(self) -> float:
        return math.inf if self.sigma_y is None else float(self.sigma_y)


MATRIX = MaterialParams(E=1000.0, nu=0.4, sigma_y=20.0)
FIBER = MaterialParams(E=200_000.0, nu=0.18)


@dataclass
class PlasticState:
    eps_p: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        self.eps_p = np.asarray(self.eps_p, dtype=np.float64).reshape(4)

    @property
    def trace(self) -> float:
        return float(self.eps_p[0] + self.eps_p[1] + self.eps_p[2])


def elastic_stiffness(m: MaterialParams) -> np.ndarray:
    """4x3 map from ``(e_xx, e_yy, e_xy)`` to ``(s_xx, s_yy, s_zz, s_xy)``."""
    lam, mu = m.lame
    return np.array([
        [lam + 2 * mu, lam, 0.0],
        [lam, lam + 2 * mu, 0.0],
        [lam, lam, 0.0],
        [0.0, 0.0, 2 * mu],
    ])


def von_mises(stress: np.ndarray) -> np.ndarray:
    s = np.asarray(stress, dtype=np.float64)
    p = (s[..., 0] + s[..., 1] + s[..., 2]) / 3.0
    dxx, dyy, dzz = s[..., 0] - p, s[..., 1] - p, s[..., 2] - p
    return np.sqrt(1.5 * (dxx ** 2 + dyy ** 2 + dzz ** 2 + 2.0 * s[..., 3] ** 2))


def j2_path(strain: np.ndarray, m: MaterialParams = MATRIX,
            state: PlasticState | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stress and plastic-strain histories along a total-strain path (radial return)."""
    strain = np.asarray(strain, dtype=np.float64).reshape(-1, 3)
    lam, mu = m.lame
    eps0 = np.zeros(4) if state is None else state.eps_p
    return kernels.j2_path(strain, lam, mu, m.yield_stress, eps0)


def j2_step(state: PlasticState, strain, m: MaterialParams = MATRIX
            ) -> tuple[PlasticState, np.ndarray]:
    stress, hist = j2_path(np.asarray(strain).reshape(1, 3), m, state)
    return PlasticState(hist[0]), stress[0]


def mixture_path(strain: np.ndarray, fvr: float, matrix: MaterialParams = MATRIX,
                 fiber: MaterialParams = FIBER) -> np.ndarray:
    """Iso-strain volume average of an elastic fiber phase and a J2 matrix phase.

    A cheap homogenization stand-in: both phases see the same strain and the
    stresses are averaged with weights ``fvr`` and ``1 - fvr``.
    """
    if not 0.0 <= fvr <= 1.0:
        raise ValueError(f"fvr must lie in [0, 1], got {fvr}")
    strain = np.asarray(strain, dtype=np.float64).reshape(-1, 3)
    s_matrix, _ = j2_path(strain, matrix)
    s_fiber, _ = j2_path(strain, fiber)
    return fvr * s_fiber + (1.0 - fvr) * s_matrix


def mixture_step(states: tuple[PlasticState, PlasticState], strain, fvr: float,
                 matrix: MaterialParams = MATRIX, fiber: MaterialParams = FIBER):
    """One iso-strain step; ``states`` is ``(matrix_state, fiber_state)``."""
    if not 0.0 <= fvr <= 1.0:
        raise ValueError(f"fvr must lie in [0, 1], got {fvr}")
    ms, s_m = j2_step(states[0], strain, matrix)
    fs, s_f = j2_step(states[1], strain, fiber)
    return (ms, fs), fvr * s_f + (1.0 - fvr) * s_m
