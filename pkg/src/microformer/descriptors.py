"""Two-point spatial correlations and PCA microstructure descriptors."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .micro import PhaseGrid

MATRIX, FIBER = 0, 1
DEFAULT_RESOLUTION = 64
DEFAULT_K = 3


@dataclass
class CorrelationMap:
    """``values[ri, rj]`` = probability that tail is phase ``h`` and head (tail + r) is ``h2``."""

    values: np.ndarray
    phases: tuple

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def indicator(grid: PhaseGrid, phase: int) -> np.ndarray:
    return (grid.cells == phase).astype(np.float64)


def fft_correlate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Raw periodic cross-correlation ``mean_s a[s] b[s + r]`` via FFT."""
    shape = a.shape
    fa = np.fft.rfft2(a)
    fb = np.fft.rfft2(b)
    return np.fft.irfft2(np.conj(fa) * fb, s=shape) / a.size


def two_point(grid: PhaseGrid, h: int, h2: int) -> CorrelationMap:
    """Periodic two-point correlation of phases ``h`` (tail) and ``h2`` (head).

    For indicator fields the sum over positions is an integer count, so the
    FFT result is snapped to the nearest count before normalizing.
    """
    a, b = indicator(grid, h), indicator(grid, h2)
    counts = np.rint(fft_correlate(a, b) * a.size)
    return CorrelationMap(counts / a.size, (h, h2))


def matrix_autocorrelation(grid: PhaseGrid) -> np.ndarray:
    return two_point(grid, MATRIX, MATRIX).flat()


@dataclass
class PCABasis:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    resolution: int | None = None

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    def save(self, path) -> None:
        """Write ``<path>`` (JSON manifest) and a sibling ``.bin`` f32 blob."""
        path = Path(path)
        blob = path.with_suffix(".bin")
        data = np.concatenate([self.mean, self.components.reshape(-1)]).astype("<f4")
        blob.write_bytes(data.tobytes())
        manifest = {
            "format": "microformer-pca/1",
            "k": self.k,
            "n_features": self.n_features,
            "resolution": self.resolution,
            "phases": [MATRIX, MATRIX],
            "explained_variance_ratio": [float(v) for v in self.explained_variance_ratio],
            "blob": blob.name,
            "dtype": "<f4",
            "layout": ["mean", "components"],
        }
        path.write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PCABasis":
        path = Path(path)
        man = json.loads(path.read_text())
        k, n = int(man["k"]), int(man["n_features"])
        data = np.frombuffer((path.parent / man["blob"]).read_bytes(), dtype="<f4")
        if data.size != n * (k + 1):
            raise ValueError(f"{path}: blob holds {data.size} values, expected {n * (k + 1)}")
        data = data.astype(np.float64)
        return cls(data[:n].copy(), data[n:].reshape(k, n).copy(),
                   np.asarray(man["explained_variance_ratio"], dtype=np.float64),
                   man.get("resolution"))


@dataclass
class MicroDescriptor:
    scores: np.ndarray
    source: str = "pca"


def pca_fit(samples: Sequence[np.ndarray] | np.ndarray, k: int = DEFAULT_K,
            resolution: int | None = None) -> PCABasis:
    """Mean-centered SVD; keeps the top ``k`` right singular vectors.

    Each component's largest-magnitude entry is made positive so the basis is
    reproducible.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("samples must be a 2-D array (n_samples, n_features)")
    n, d = X.shape
    if not 1 <= k <= min(n, d):
        raise ValueError(f"need 1 <= k <= min(n_samples, n_features); got k={k}, shape={X.shape}")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    total = float((s ** 2).sum())
    if total <= 0.0:
        raise ValueError("samples have zero variance; explained-variance ratios are undefined")
    comps = vt[:k].copy()
    pivot = np.abs(comps).argmax(axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= signs[:, None]
    ratio = s[:k] ** 2 / total
    return PCABasis(mean, comps, ratio, resolution)


def pca_transform(basis: PCABasis, f: np.ndarray) -> np.ndarray:
    """Scores ``<f - mean, phi_n>``; accepts one vector or a batch of rows."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != basis.n_features:
        raise ValueError(f"feature length {f.shape[-1]} != basis length {basis.n_features}")
    return (f - basis.mean) @ basis.components.T


def pca_reconstruct(basis: PCABasis, scores: np.ndarray, k: int | None = None) -> np.ndarray:
    k = basis.k if k is None else k
    scores = np.asarray(scores)
    return basis.mean + scores[..., :k] @ basis.components[:k]


def explained_variance(basis: PCABasis) -> np.ndarray:
    return basis.explained_variance_ratio.copy()


def describe(grid: PhaseGrid, basis: PCABasis) -> MicroDescriptor:
    if basis.resolution is not None and grid.resolution != basis.resolution:
        raise ValueError(f"grid resolution {grid.resolution} != basis resolution {basis.resolution}")
    return MicroDescriptor(pca_transform(basis, matrix_autocorrelation(grid)), "pca")
