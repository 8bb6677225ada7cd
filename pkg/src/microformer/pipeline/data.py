"""Sequence records, dataset generation, standardization and batching."""
from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from ..constitutive import MATRIX, j2_path, mixture_path
from ..loadpath import MAX_STEPS, cyclic_path, random_path
from ..micro import JammingError, downsample, generate_sve, rasterize, read_pgm, write_pgm

MICRO_RESOLUTION = 64
MIXTURE_FVR = (0.2, 0.5)
DEFAULT_RANDOM_FRACTION = {"homogeneous": 0.5, "mixture": 0.4}


@dataclass
class SequenceRecord:
    id: str
    strain: np.ndarray               # [T, 3] Green-Lagrange components (xx, yy, xy)
    stress: np.ndarray               # [T, 4] MPa (xx, yy, zz, xy)
    kind: str                        # "random" or "cyclic"
    fvr: float = 0.0
    micro: Optional[str] = None      # PGM path, relative to the dataset file
    grid: Optional[np.ndarray] = field(default=None, repr=False)   # loaded micro cells

    def __post_init__(self):
        self.strain = np.asarray(self.strain, dtype=np.float64).reshape(-1, 3)
        self.stress = np.asarray(self.stress, dtype=np.float64).reshape(-1, 4)
        if len(self.strain) != len(self.stress):
            raise ValueError(f"record {self.id}: strain and stress lengths differ")
        if not 1 <= len(self.strain) <= MAX_STEPS:
            raise ValueError(f"record {self.id}: length {len(self.strain)} outside [1, {MAX_STEPS}]")

    def __len__(self) -> int:
        return len(self.strain)

    def to_json(self) -> dict:
        d = {"id": self.id}
        if self.micro is not None:
            d["micro"] = self.micro
        d.update(fvr=float(self.fvr), strain=self.strain.tolist(), stress=self.stress.tolist(),
                 kind=self.kind)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SequenceRecord":
        return cls(id=d["id"], strain=d["strain"], stress=d["stress"], kind=d["kind"],
                   fvr=d.get("fvr", 0.0), micro=d.get("micro"))


def write_jsonl(records: Iterable[SequenceRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")


def read_jsonl(path, load_micro: bool = True, limit: Optional[int] = None) -> list:
    path = Path(path)
    out = []
    with open(path) as fh:
        for line in fh:
            if limit is not None and len(out) >= limit:
                break
            if not line.strip():
                continue
            r = SequenceRecord.from_json(json.loads(line))
            if load_micro and r.micro is not None:
                r.grid = read_pgm(path.parent / r.micro).cells
            out.append(r)
    return out


# -- generation ----------------------------------------------------------------

def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _make_record(args) -> tuple:
    kind, index, seed, random_fraction, micro_dir, micro_rel = args
    rng = record_rng(seed, index)
    path = random_path(rng) if rng.random() < random_fraction else cyclic_path(rng)
    strain = path.strain()
    rid = f"{kind[:3]}-{seed}-{index:07d}"
    if kind == "homogeneous":
        return SequenceRecord(rid, strain, j2_path(strain, MATRIX)[0], path.kind).to_json(), None
    target = rng.uniform(*MIXTURE_FVR)
    try:
        fibers = generate_sve(rng, target)
    except JammingError as err:     # keep the densest packing reached
        fibers = err.fibers
    name = f"{rid}.pgm"
    write_pgm(rasterize(fibers, MICRO_RESOLUTION), Path(micro_dir) / name)
    rec = SequenceRecord(rid, strain, mixture_path(strain, fibers.fvr), path.kind,
                         fvr=fibers.fvr, micro=f"{micro_rel}/{name}")
    return rec.to_json(), fibers.fvr < target


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def generate_dataset(path, kind: str, n_records: int, seed: int = 0,
                     random_fraction: Optional[float] = None, jobs: int = 1,
                     start: int = 0) -> dict:
    """Write ``n_records`` records to ``path`` (JSON lines); returns a summary.

    Record ``i`` depends only on ``(seed, start + i)``, so any split of the
    index range across workers or runs produces the same records.
    """
    if kind not in DEFAULT_RANDOM_FRACTION:
        raise ValueError(f"kind must be one of {sorted(DEFAULT_RANDOM_FRACTION)}")
    if n_records < 0:
        raise ValueError("n_records must be non-negative")
    frac = DEFAULT_RANDOM_FRACTION[kind] if random_fraction is None else random_fraction
    if not 0.0 <= frac <= 1.0:
        raise ValueError("random_fraction must lie in [0, 1]")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    micro_rel = f"{path.stem}_micro"
    if kind == "mixture":
        (path.parent / micro_rel).mkdir(exist_ok=True)
    tasks = [(kind, start + i, seed, frac, str(path.parent / micro_rel), micro_rel)
             for i in range(n_records)]
    jammed = 0
    kinds = {"random": 0, "cyclic": 0}
    with open(path, "w") as fh:
        if jobs > 1 and n_records > 1:
            with ProcessPoolExecutor(jobs) as pool:
                results = pool.map(_make_record, tasks, chunksize=max(1, n_records // (8 * jobs)))
                for rec, jam in results:
                    fh.write(json.dumps(rec) + "\n")
                    jammed += bool(jam)
                    kinds[rec["kind"]] += 1
        else:
            for t in tasks:
                rec, jam = _make_record(t)
                fh.write(json.dumps(rec) + "\n")
                jammed += bool(jam)
                kinds[rec["kind"]] += 1
    return {"path": str(path), "records": n_records, "jammed": jammed, **kinds}


# -- splitting, truncation -----------------------------------------------------

def is_validation(record_id: str, fraction: float = 0.2) -> bool:
    """Stable hash split: depends only on the record id."""
    h = int.from_bytes(hashlib.sha256(record_id.encode()).digest()[:8], "little")
    return h / 2.0 ** 64 < fraction


def split_records(records: Sequence[SequenceRecord], val_fraction: float = 0.2) -> tuple:
    train = [r for r in records if not is_validation(r.id, val_fraction)]
    val = [r for r in records if is_validation(r.id, val_fraction)]
    return train, val


def truncate_random(record: SequenceRecord, rng: np.random.Generator) -> SequenceRecord:
    n = int(rng.integers(1, len(record) + 1))
    return SequenceRecord(record.id, record.strain[:n], record.stress[:n], record.kind,
                          record.fvr, record.micro, record.grid)


# -- standardization -----------------------------------------------------------

@dataclass
class Standardizer:
    strain_mean: np.ndarray
    strain_std: np.ndarray
    stress_mean: np.ndarray
    stress_std: np.ndarray
    micro_mean: Optional[np.ndarray] = None
    micro_std: Optional[np.ndarray] = None

    @staticmethod
    def _moments(x: np.ndarray, what: str) -> tuple:
        mean, std = x.mean(axis=0), x.std(axis=0)
        bad = np.flatnonzero(~(std > 1e-12 * np.maximum(1.0, np.abs(mean))))
        if bad.size:
            raise ValueError(f"{what} component(s) {bad.tolist()} have zero variance")
        return mean, std

    @classmethod
    def fit(cls, records: Sequence[SequenceRecord],
            micro: Optional[np.ndarray] = None) -> "Standardizer":
        """Moments over every time step of every record; ``micro`` is one row per record."""
        if not records:
            raise ValueError("cannot fit a standardizer on no records")
        e = np.concatenate([r.strain for r in records])
        s = np.concatenate([r.stress for r in records])
        out = cls(*cls._moments(e, "strain"), *cls._moments(s, "stress"))
        if micro is not None:
            out.micro_mean, out.micro_std = cls._moments(np.asarray(micro, dtype=np.float64), "micro")
        return out

    def strain(self, e):
        return (np.asarray(e) - self.strain_mean) / self.strain_std

    def stress(self, s):
        return (np.asarray(s) - self.stress_mean) / self.stress_std

    def stress_inverse(self, z):
        return np.asarray(z) * self.stress_std + self.stress_mean

    def strain_inverse(self, z):
        return np.asarray(z) * self.strain_std + self.strain_mean

    def micro(self, m):
        if self.micro_mean is None:
            return np.asarray(m, dtype=np.float64)
        return (np.asarray(m) - self.micro_mean) / self.micro_std

    def apply(self, record: SequenceRecord) -> SequenceRecord:
        return SequenceRecord(record.id, self.strain(record.strain), self.stress(record.stress),
                              record.kind, record.fvr, record.micro, record.grid)

    def invert(self, record: SequenceRecord) -> SequenceRecord:
        return SequenceRecord(record.id, self.strain_inverse(record.strain),
                              self.stress_inverse(record.stress), record.kind, record.fvr,
                              record.micro, record.grid)

    def to_json(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in
             ("strain_mean", "strain_std", "stress_mean", "stress_std")}
        if self.micro_mean is not None:
            d["micro_mean"], d["micro_std"] = self.micro_mean.tolist(), self.micro_std.tolist()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Standardizer":
        arr = {k: np.asarray(v, dtype=np.float64) for k, v in d.items()}
        return cls(**arr)


# -- batching ------------------------------------------------------------------

@dataclass
class Batch:
    strain: np.ndarray        # [B, T, 3] standardized, zero padded
    stress: np.ndarray        # [B, T, 4] standardized targets
    mask: np.ndarray          # [B, T] 1 on real steps
    micro: Optional[np.ndarray]
    ids: list

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1).astype(int)


def collate(records: Sequence[SequenceRecord], micro: Optional[np.ndarray] = None) -> Batch:
    """Pad already-standardized records to a common length.

    Padding sits after the real steps, and every attention is causal, so the
    padded positions never influence real ones.
    """
    b, t = len(records), max(len(r) for r in records)
    strain, stress, mask = np.zeros((b, t, 3)), np.zeros((b, t, 4)), np.zeros((b, t))
    for i, r in enumerate(records):
        n = len(r)
        strain[i, :n], stress[i, :n], mask[i, :n] = r.strain, r.stress, 1.0
    return Batch(strain, stress, mask, micro, [r.id for r in records])


def length_bucketed_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator,
                            pool_batches: int = 16) -> Iterator[np.ndarray]:
    """Shuffle, group similar lengths together inside pools, then shuffle batch order."""
    order = rng.permutation(len(lengths))
    batches = []
    pool = batch_size * pool_batches
    for p in range(0, len(order), pool):
        chunk = order[p:p + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    for i in rng.permutation(len(batches)):
        yield batches[i]


def micro_images(records: Sequence[SequenceRecord], size: int = 32) -> np.ndarray:
    """Binary grids resampled to ``size`` for the image encoder."""
    from ..micro import PhaseGrid
    out = []
    for r in records:
        if r.grid is None:
            raise ValueError(f"record {r.id} has no microstructure loaded")
        g = PhaseGrid(r.grid)
        out.append((g if g.resolution == size else downsample(g, size)).cells)
    return np.asarray(out, dtype=np.float64)
