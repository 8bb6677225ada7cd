"""Datasets, training, checkpoints and evaluation for the surrogate."""
from .checkpoint import Checkpoint, load_checkpoint, load_optimizer, save_checkpoint
from .data import (Batch, SequenceRecord, Standardizer, collate, generate_dataset, is_validation,
                   read_jsonl, record_rng, split_records, truncate_random, write_jsonl)
from .evaluate import evaluate, position_trend, predict_records, rmse_metrics, write_report
from .optim import AdamState, adam_step, clip_global_norm, lr_schedule
from .train import DivergenceError, TrainConfig, TrainResult, dataset_mse, overfit_config, train

__all__ = [
    "Checkpoint", "load_checkpoint", "load_optimizer", "save_checkpoint", "Batch",
    "SequenceRecord", "Standardizer", "collate", "generate_dataset", "is_validation",
    "read_jsonl", "record_rng", "split_records", "truncate_random", "write_jsonl", "evaluate",
    "position_trend", "predict_records", "rmse_metrics", "write_report", "AdamState",
    "adam_step", "clip_global_norm", "lr_schedule", "DivergenceError", "TrainConfig", "overfit_config",
    "TrainResult", "dataset_mse", "train",
]
