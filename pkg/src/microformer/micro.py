"""Periodic two-phase fiber microcells: random placement, rasterization, PGM I/O."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

CELL_SIZE = 70.0  # µm
FIBER_DIAMETER = 7.0  # µm
MAX_ATTEMPTS = 10_000
_CHUNK = 64


class JammingError(RuntimeError):
    """Random placement gave up before reaching the target fiber volume ratio."""

    def __init__(self, fibers: "FiberSet", target: float):
        self.fibers = fibers
        self.achieved_fvr = fibers.fvr
        super().__init__(f"jammed at FVR {fibers.fvr:.4f} (target {target:.4f}) "
                         f"after {len(fibers)} fibers")


@dataclass
class FiberSet:
    cell_size: float
    fiber_diameter: float
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)

    def __len__(self):
        return len(self.centers)

    @property
    def fvr(self) -> float:
        """Analytic area fraction; exact because fibers never overlap."""
        disc = math.pi * (self.fiber_diameter / 2.0) ** 2
        return len(self) * disc / self.cell_size ** 2

    def min_periodic_distance(self) -> float:
        if len(self) < 2:
            return math.inf
        d = np.abs(self.centers[:, None, :] - self.centers[None, :, :])
        d = np.minimum(d, self.cell_size - d)
        r = np.sqrt((d ** 2).sum(-1))
        r[np.diag_indices(len(self))] = np.inf
        return float(r.min())

    def to_json(self) -> dict:
        return {"cell_size": self.cell_size, "fiber_diameter": self.fiber_diameter,
                "centers": self.centers.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "FiberSet":
        return cls(float(obj["cell_size"]), float(obj["fiber_diameter"]),
                   np.asarray(obj.get("centers", []), dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path) -> "FiberSet":
        return cls.from_json(json.loads(Path(path).read_text()))


def generate_sve(seed, target_fvr: float, cell_size: float = CELL_SIZE,
                 fiber_d: float = FIBER_DIAMETER, max_attempts: int = MAX_ATTEMPTS) -> FiberSet:
    """Place non-overlapping fibers uniformly at random until ``target_fvr`` is reached.

    Each fiber gets up to ``max_attempts`` candidate positions; candidates are
    drawn in fixed-size chunks so the result depends only on ``seed``.
    Raises :class:`JammingError` (carrying the partial set) when a fiber cannot
    be placed.
    """
    if not 0.0 <= target_fvr < 1.0:
        raise ValueError(f"target_fvr must lie in [0, 1), got {target_fvr}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fibers = FiberSet(cell_size, fiber_d)
    centers = np.zeros((0, 2))
    min_d2 = fiber_d * fiber_d
    disc = math.pi * (fiber_d / 2.0) ** 2
    n = 0
    while n * disc / cell_size ** 2 < target_fvr:
        attempts = 0
        placed = False
        while attempts < max_attempts and not placed:
            m = min(_CHUNK, max_attempts - attempts)
            cand = rng.uniform(0.0, cell_size, size=(m, 2))
            i = kernels.first_free(cand, 0, centers, cell_size, min_d2)
            if i < 0:
                attempts += m
                continue
            centers = np.vstack([centers, cand[i]])
            placed = True
        if not placed:
            fibers.centers = centers
            raise JammingError(fibers, target_fvr)
        n += 1
    fibers.centers = centers
    return fibers


@dataclass
class PhaseGrid:
    """Periodic binary raster; 1 = fiber, 0 = matrix. Rows index y, columns x."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2 or cells.shape[0] != cells.shape[1]:
            raise ValueError(f"PhaseGrid must be square, got shape {cells.shape}")
        if not np.isin(cells, (0, 1)).all():
            raise ValueError("PhaseGrid cells must be 0 or 1")
        self.cells = cells.astype(np.uint8)

    @property
    def resolution(self) -> int:
        return self.cells.shape[0]

    @property
    def fvr(self) -> float:
        return float(self.cells.sum()) / self.cells.size

    def to_json(self) -> list:
        return self.cells.tolist()


def rasterize(fibers: FiberSet, resolution: int) -> PhaseGrid:
    """Mark every pixel whose center lies inside a periodically wrapped fiber disc."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    pitch = fibers.cell_size / resolution
    c = (np.arange(resolution) + 0.5) * pitch
    r2 = (fibers.fiber_diameter / 2.0) ** 2
    cells = np.zeros((resolution, resolution), dtype=bool)
    L = fibers.cell_size
    for cx, cy in fibers.centers:
        dx = np.abs(c - cx)
        dx = np.minimum(dx, L - dx)
        dy = np.abs(c - cy)
        dy = np.minimum(dy, L - dy)
        cells |= (dy[:, None] ** 2 + dx[None, :] ** 2) <= r2
    return PhaseGrid(cells.astype(np.uint8))


def downsample(grid: PhaseGrid, resolution: int) -> PhaseGrid:
    """Block-average to a coarser square grid and threshold at one half."""
    f = grid.resolution // resolution
    if f * resolution != grid.resolution:
        raise ValueError(f"cannot downsample {grid.resolution} to {resolution}")
    if f == 1:
        return grid
    blocks = grid.cells.reshape(resolution, f, resolution, f).mean(axis=(1, 3))
    return PhaseGrid((blocks >= 0.5).astype(np.uint8))


def write_pgm(grid: PhaseGrid, path) -> None:
    n = grid.resolution
    body = (grid.cells * 255).astype(np.uint8).tobytes()
    Path(path).write_bytes(f"P5\n{n} {n}\n255\n".encode("ascii") + body)


def read_pgm(path) -> PhaseGrid:
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: expected maxval 255, got {maxval}")
    body = raw[pos:]
    if len(body) != w * h:
        raise ValueError(f"{path}: expected {w * h} raster bytes, got {len(body)}")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return PhaseGrid((img >= 128).astype(np.uint8))
