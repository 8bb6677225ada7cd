"""Teacher-forced training with warmup Adam, validation and checkpointing."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..descriptors import PCABasis, matrix_autocorrelation, pca_fit, pca_transform
from ..micro import PhaseGrid
from ..ndcore import NonFiniteError, Tape, Tensor, backward, ops
from ..seqmodel import Surrogate, SurrogateConfig, preset, shift_right
from .checkpoint import load_checkpoint, load_optimizer, save_checkpoint
from .data import (SequenceRecord, Standardizer, collate, length_bucketed_batches, micro_images,
                   read_jsonl, split_records)
from .optim import AdamState, adam_step, clip_global_norm, lr_schedule

log = logging.getLogger(__name__)

FINE_TUNE_LR_FACTOR = 0.1
MICRO_SOURCES = ("pca", "cnn", "none")


class DivergenceError(NonFiniteError):
    """Training produced a non-finite loss or validation error."""


@dataclass
class TrainConfig:
    dataset: str
    output: str
    preset: str = "desk"
    model: dict = field(default_factory=dict)     # SurrogateConfig overrides
    micro: str = "pca"
    pca_basis: Optional[str] = None               # fitted on the training split when absent
    pca_k: int = 3
    batch_size: int = 100
    epochs: int = 10
    warmup_steps: int = 4000
    fine_tune: bool = False
    init: Optional[str] = None                    # pre-trained checkpoint directory
    seed: int = 0
    val_fraction: float = 0.2
    clip_norm: float = 1.0
    truncate: bool = True
    max_records: Optional[int] = None
    max_steps: Optional[int] = None
    time_limit: Optional[float] = None            # seconds; no epoch starts past the budget
    resume: bool = False
    val_every: int = 1

    def __post_init__(self):
        for name in ("batch_size", "epochs", "warmup_steps", "pca_k", "val_every"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.micro not in MICRO_SOURCES:
            raise ValueError(f"micro must be one of {MICRO_SOURCES}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        return cls(**d)

    def model_config(self) -> SurrogateConfig:
        micro_dim = 0 if self.micro == "none" else (self.pca_k if self.micro == "pca" else 3)
        source = "cnn" if self.micro == "cnn" else "pca"
        return preset(self.preset, micro_dim=micro_dim, micro_source=source, **self.model)

    def lr(self, step: int, d_model: int) -> float:
        factor = FINE_TUNE_LR_FACTOR if self.fine_tune else 1.0
        return factor * lr_schedule(step, d_model, self.warmup_steps)


OVERFIT_RECORDS = 32
OVERFIT_STEPS = 2000


def overfit_config(dataset: str, output: str, **overrides) -> TrainConfig:
    """Memorization sanity run: a few records, full batch, no dropout and no truncation.

    Standardized train MSE should fall below 1e-3 within ``OVERFIT_STEPS``.
    """
    opts = dict(dataset=dataset, output=output, preset="tiny", model={"dropout": 0.0},
                batch_size=OVERFIT_RECORDS, max_records=OVERFIT_RECORDS, epochs=OVERFIT_STEPS,
                max_steps=OVERFIT_STEPS, warmup_steps=200, val_fraction=0.0, truncate=False,
                val_every=OVERFIT_STEPS)
    opts.update(overrides)
    return TrainConfig(**opts)


@dataclass
class TrainResult:
    history: list
    best_val_mse: float
    best_epoch: int
    steps: int
    output: Path
    model: Surrogate
    standardizer: Standardizer
    pca: Optional[PCABasis]
    elapsed: float


# -- data preparation ----------------------------------------------------------

def micro_features(records: Sequence[SequenceRecord]) -> np.ndarray:
    return np.array([matrix_autocorrelation(PhaseGrid(r.grid)) for r in records])


@dataclass
class PreparedData:
    strain: list
    stress: list
    micro: Optional[np.ndarray]
    ids: list

    def __len__(self):
        return len(self.strain)

    def lengths(self) -> np.ndarray:
        return np.array([len(s) for s in self.strain])

    def batch(self, idx, lengths=None):
        recs = [SequenceRecord(self.ids[i],
                               self.strain[i][:None if lengths is None else lengths[i]],
                               self.stress[i][:None if lengths is None else lengths[i]], "")
                for i in idx]
        micro = None if self.micro is None else self.micro[np.asarray(idx)]
        return collate(recs, micro)


def prepare(records, standardizer: Standardizer, micro_kind: str, pca: Optional[PCABasis],
            cnn_size: int = 32) -> PreparedData:
    micro = None
    if not records:
        return PreparedData([], [], None, [])
    if micro_kind == "pca":
        micro = standardizer.micro(pca_transform(pca, micro_features(records)))
    elif micro_kind == "cnn":
        micro = micro_images(records, cnn_size)
    return PreparedData([standardizer.strain(r.strain) for r in records],
                        [standardizer.stress(r.stress) for r in records], micro,
                        [r.id for r in records])


# -- loss evaluation -----------------------------------------------------------

def batch_loss(model: Surrogate, batch, rng=None) -> Tensor:
    pred = model(batch.strain, shift_right(batch.stress), batch.micro, rng=rng)
    return ops.mse(pred, batch.stress, batch.mask)


def dataset_mse(model: Surrogate, data: PreparedData, batch_size: int = 200) -> float:
    """Teacher-forced, eval-mode MSE over every standardized entry of ``data``."""
    if len(data) == 0:
        return float("nan")
    was = model.training
    model.eval()
    total, count = 0.0, 0.0
    try:
        order = np.argsort(data.lengths(), kind="stable")
        for i in range(0, len(order), batch_size):
            b = data.batch(order[i:i + batch_size])
            loss = batch_loss(model, b).item()
            n = b.mask.sum() * 4
            total += loss * n
            count += n
    finally:
        model.train(was)
    return total / count


# -- the loop ------------------------------------------------------------------

def _history_path(out: Path) -> Path:
    return out / "history.jsonl"


def train(config: TrainConfig, records: Optional[Sequence[SequenceRecord]] = None) -> TrainResult:
    t0 = time.perf_counter()
    out = Path(config.output)
    out.mkdir(parents=True, exist_ok=True)
    if records is None:
        records = read_jsonl(config.dataset, load_micro=config.micro != "none",
                             limit=config.max_records)
    elif config.max_records is not None:
        records = records[:config.max_records]
    train_recs, val_recs = split_records(records, config.val_fraction)
    if not train_recs:
        raise ValueError("training split is empty")
    log.info("records: %d train / %d validation", len(train_recs), len(val_recs))

    pca = None
    micro_scores = None
    if config.micro == "pca":
        if config.pca_basis:
            pca = PCABasis.load(config.pca_basis)
        else:
            pca = pca_fit(micro_features(train_recs), config.pca_k,
                          resolution=train_recs[0].grid.shape[0])
        if pca.k != config.pca_k:
            raise ValueError(f"PCA basis has k={pca.k}, config asks for {config.pca_k}")
        micro_scores = pca_transform(pca, micro_features(train_recs))
    standardizer = Standardizer.fit(train_recs, micro_scores)

    mcfg = config.model_config()
    model = Surrogate(mcfg, np.random.default_rng(config.seed))
    cnn_size = model.cnn.config.input_size if model.cnn is not None else 32
    train_data = prepare(train_recs, standardizer, config.micro, pca, cnn_size)
    val_data = prepare(val_recs, standardizer, config.micro, pca, cnn_size)
    del records, train_recs, val_recs

    params = model.parameters()
    opt = AdamState.for_params(params)
    history: list = []
    best_val, best_epoch, start_epoch = math.inf, -1, 0
    last_dir, best_dir = out / "last", out / "best"

    if config.resume and (last_dir / "manifest.json").exists():
        ck = load_checkpoint(last_dir, exact=True)
        model.load_arrays(ck.model.state_arrays())
        opt = load_optimizer(last_dir, model)
        meta = ck.metadata
        history, best_val, best_epoch = meta["history"], meta["best_val_mse"], meta["best_epoch"]
        start_epoch = meta["epoch"] + 1
        log.info("resumed at epoch %d (step %d)", start_epoch, opt.step)
    elif config.init:
        pre = load_checkpoint(config.init)
        loaded = model.load_arrays(pre.model.state_arrays(), strict=False)
        log.info("initialized %d/%d tensors from %s", len(loaded),
                 len(model.state_arrays()), config.init)

    meta_base = {"train_config": asdict(config), "n_train": len(train_data),
                 "n_val": len(val_data)}
    lengths_full = train_data.lengths()
    epoch_times: list = []
    hist_file = _history_path(out)
    if start_epoch == 0 and hist_file.exists():
        hist_file.unlink()

    for epoch in range(start_epoch, config.epochs):
        if config.max_steps is not None and opt.step >= config.max_steps:
            break
        if config.time_limit is not None and epoch_times:
            if time.perf_counter() - t0 + max(epoch_times) > config.time_limit:
                log.info("time budget reached before epoch %d", epoch)
                break
        te = time.perf_counter()
        rng = np.random.default_rng([config.seed, epoch])
        if config.truncate:
            lengths = np.array([int(rng.integers(1, n + 1)) for n in lengths_full])
        else:
            lengths = lengths_full
        model.train()
        loss_sum, tok_sum = 0.0, 0.0
        for idx in length_bucketed_batches(lengths, config.batch_size, rng):
            if model.cnn is not None and len(idx) < 2:
                continue            # batch norm needs two samples
            batch = train_data.batch(idx, lengths)
            try:
                with Tape() as tape:
                    loss = batch_loss(model, batch, rng)
                grads = backward(loss, tape)
                gl = [grads.get(p.id, np.zeros(p.shape)) for p in params]
                clip_global_norm(gl, config.clip_norm)
            except NonFiniteError as err:
                raise DivergenceError(f"epoch {epoch}, step {opt.step + 1}: {err}") from err
            adam_step(params, gl, opt, config.lr(opt.step + 1, mcfg.d_model))
            n = batch.mask.sum() * 4
            loss_sum += loss.item() * n
            tok_sum += n
            if config.max_steps is not None and opt.step >= config.max_steps:
                break
        entry = {"epoch": epoch, "step": opt.step, "train_mse": float(loss_sum / max(tok_sum, 1.0)),
                 "lr": config.lr(max(opt.step, 1), mcfg.d_model)}
        validate = (epoch + 1) % config.val_every == 0 or epoch == config.epochs - 1
        if validate and len(val_data):
            val = dataset_mse(model, val_data)
            if not math.isfinite(val):
                raise DivergenceError(f"validation MSE is {val} after epoch {epoch}")
            entry["val_mse"] = float(val)
        entry["seconds"] = time.perf_counter() - te
        epoch_times.append(entry["seconds"])
        history.append(entry)
        with open(hist_file, "a") as fh:
            fh.write(json.dumps(entry) + "\n")
        log.info("epoch %d: %s", epoch, {k: round(v, 6) if isinstance(v, float) else v
                                         for k, v in entry.items()})
        score = entry.get("val_mse", entry["train_mse"] if not len(val_data) else math.inf)
        if score < best_val:
            best_val, best_epoch = score, epoch
            save_checkpoint(best_dir, model, standardizer, pca,
                            {**meta_base, "epoch": epoch, "step": opt.step, "val_mse": score})
        save_checkpoint(last_dir, model, standardizer, pca,
                        {**meta_base, "epoch": epoch, "step": opt.step, "history": history,
                         "best_val_mse": best_val, "best_epoch": best_epoch}, optimizer=opt)

    return TrainResult(history, best_val, best_epoch, opt.step, out, model, standardizer, pca,
                       time.perf_counter() - t0)
