"""Checkpoint directories: ``manifest.json`` + ``weights.bin`` (+ optional extras).

``weights.bin`` is the concatenation of every parameter and buffer as
little-endian float32, in the order listed in the manifest's tensor index.
``train_state.npz`` (optional) keeps exact float64 weights and optimizer
moments so an interrupted run can resume bitwise-identically.
"""
from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..descriptors import PCABasis
from ..seqmodel import Surrogate, SurrogateConfig
from .data import Standardizer
from .optim import AdamState

FORMAT = "microformer-checkpoint/1"


@dataclass
class Checkpoint:
    model: Surrogate
    standardizer: Standardizer
    pca: Optional[PCABasis]
    metadata: dict
    path: Path


def save_checkpoint(directory, model: Surrogate, standardizer: Standardizer,
                    pca: Optional[PCABasis] = None, metadata: Optional[dict] = None,
                    optimizer: Optional[AdamState] = None) -> Path:
    directory = Path(directory)
    tmp = directory.with_name(directory.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    arrays = model.state_arrays()
    index, offset = [], 0
    with open(tmp / "weights.bin", "wb") as fh:
        for name, arr in arrays.items():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            index.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    manifest = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "standardizer": standardizer.to_json(),
        "metadata": metadata or {},
        "pca": None,
        "weights": {"file": "weights.bin", "dtype": "float32", "byteorder": "little",
                    "count": offset},
        "tensors": index,
    }
    if pca is not None:
        pca.save(tmp / "pca.json")
        manifest["pca"] = "pca.json"
    if optimizer is not None:
        state = {f"param/{k}": v for k, v in arrays.items()}
        state.update({f"m/{i}": m for i, m in enumerate(optimizer.m)})
        state.update({f"v/{i}": v for i, v in enumerate(optimizer.v)})
        state["step"] = np.array(optimizer.step)
        np.savez(tmp / "train_state.npz", **state)
        manifest["train_state"] = "train_state.npz"
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=1))
    if directory.exists():
        shutil.rmtree(directory)
    tmp.rename(directory)
    return directory


def _read_weights(directory: Path, manifest: dict) -> dict:
    flat = np.fromfile(directory / manifest["weights"]["file"], dtype="<f4")
    if flat.size != manifest["weights"]["count"]:
        raise ValueError("weights.bin size does not match the manifest")
    out = {}
    for t in manifest["tensors"]:
        n = int(np.prod(t["shape"], dtype=np.int64))
        out[t["name"]] = flat[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float64)
    return out


def load_checkpoint(directory, exact: bool = False) -> Checkpoint:
    """Rebuild the model; ``exact`` prefers the float64 training state when present."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{directory}: not a {FORMAT} checkpoint")
    model = Surrogate(SurrogateConfig.from_dict(manifest["config"]))
    if exact and manifest.get("train_state"):
        with np.load(directory / manifest["train_state"]) as z:
            arrays = {k[6:]: z[k] for k in z.files if k.startswith("param/")}
    else:
        arrays = _read_weights(directory, manifest)
    model.load_arrays(arrays)
    model.eval()
    pca = PCABasis.load(directory / manifest["pca"]) if manifest.get("pca") else None
    return Checkpoint(model, Standardizer.from_json(manifest["standardizer"]), pca,
                      manifest.get("metadata", {}), directory)


def load_optimizer(directory, model: Surrogate) -> AdamState:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if not manifest.get("train_state"):
        raise ValueError(f"{directory} has no optimizer state")
    n = len(model.parameters())
    with np.load(directory / manifest["train_state"]) as z:
        return AdamState([z[f"m/{i}"] for i in range(n)], [z[f"v/{i}"] for i in range(n)],
                         step=int(z["step"]))
