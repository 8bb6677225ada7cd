"""Autoregressive evaluation: RMSE in MPa overall, per sequence position and per record."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..descriptors import pca_transform
from .checkpoint import Checkpoint, load_checkpoint
from .data import SequenceRecord, micro_images
from .train import micro_features


def micro_inputs(ck: Checkpoint, records: Sequence[SequenceRecord]) -> Optional[np.ndarray]:
    cfg = ck.model.config
    if cfg.homogeneous:
        return None
    if cfg.micro_source == "cnn":
        return micro_images(records, ck.model.cnn.config.input_size)
    return ck.standardizer.micro(pca_transform(ck.pca, micro_features(records)))


def predict_records(ck: Checkpoint, records: Sequence[SequenceRecord],
                    batch_size: int = 100) -> list:
    """De-standardized autoregressive stress predictions, one ``[T, 4]`` array per record."""
    records = list(records)
    micro = micro_inputs(ck, records)
    out: list = [None] * len(records)
    order = np.argsort([len(r) for r in records], kind="stable")
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        t = max(len(records[j]) for j in idx)
        strain = np.zeros((len(idx), t, 3))
        for row, j in enumerate(idx):
            strain[row, :len(records[j])] = ck.standardizer.strain(records[j].strain)
        pred = ck.model.autoregressive_predict(strain, None if micro is None else micro[idx])
        for row, j in enumerate(idx):
            out[j] = ck.standardizer.stress_inverse(pred[row, :len(records[j])])
    return out


def rmse_metrics(predictions: Sequence[np.ndarray], targets: Sequence[np.ndarray],
                 ids: Optional[Sequence[str]] = None, worst: int = 10) -> dict:
    """RMSE pooled over every component and step, plus position and per-record breakdowns."""
    if len(predictions) != len(targets) or not targets:
        raise ValueError("need matching, non-empty prediction and target lists")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(targets))]
    t_max = max(len(t) for t in targets)
    sq_pos, n_pos = np.zeros(t_max), np.zeros(t_max)
    per_record = []
    for p, t in zip(predictions, targets):
        p, t = np.asarray(p, dtype=np.float64), np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {p.shape} != target shape {t.shape}")
        err2 = ((p - t) ** 2).sum(axis=1)
        sq_pos[:len(t)] += err2
        n_pos[:len(t)] += t.shape[1]
        per_record.append(float(np.sqrt(err2.sum() / t.size)))
    overall = float(np.sqrt(sq_pos.sum() / n_pos.sum()))
    by_pos = np.sqrt(sq_pos / np.maximum(n_pos, 1))
    rank = np.argsort(per_record)[::-1][:worst]
    return {
        "rmse": overall,
        "mean_record_rmse": float(np.mean(per_record)),
        "records": len(targets),
        "rmse_by_position": by_pos.tolist(),
        "worst": [{"id": ids[i], "rmse": per_record[i]} for i in rank],
    }


def _eval_chunk(args):
    path, recs = args
    ck = load_checkpoint(path)
    return predict_records(ck, recs)


def evaluate(checkpoint, records: Sequence[SequenceRecord], jobs: int = 1,
             batch_size: int = 100) -> dict:
    records = list(records)
    if jobs > 1 and len(records) > 1 and not isinstance(checkpoint, Checkpoint):
        chunks = [records[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_eval_chunk, [(str(checkpoint), c) for c in chunks]))
        preds: list = [None] * len(records)
        for i, part in enumerate(parts):
            preds[i::jobs] = part
    else:
        ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
        preds = predict_records(ck, records, batch_size)
    metrics = rmse_metrics(preds, [r.stress for r in records], [r.id for r in records])
    all_stress = np.concatenate([r.stress for r in records])
    # RMS of the per-component deviations: the RMSE of always predicting the component means
    metrics["stress_std"] = float(np.sqrt(all_stress.var(axis=0).mean()))
    metrics["stress_std_by_component"] = all_stress.std(axis=0).tolist()
    return metrics


def position_trend(rmse_by_position: Sequence[float]) -> float:
    """Least-squares slope of RMSE against position (MPa per step)."""
    y = np.asarray(rmse_by_position)
    return float(np.polyfit(np.arange(len(y)), y, 1)[0]) if len(y) > 1 else 0.0


def write_report(metrics: dict, json_path, csv_path=None) -> None:
    Path(json_path).write_text(json.dumps(metrics, indent=1))
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["position", "rmse_mpa"])
            for i, v in enumerate(metrics["rmse_by_position"]):
                w.writerow([i + 1, f"{v:.9g}"])
