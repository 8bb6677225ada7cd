"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.
Relative paths resolve against ``$MICROFORMER_DATA`` when it is set.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ENV = "MICROFORMER_DATA"

RUN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["dataset", "output"],
    "additionalProperties": False,
    "properties": {
        "dataset": {"type": "string"},
        "output": {"type": "string"},
        "preset": {"enum": ["desk", "full", "tiny"]},
        "model": {"type": "object"},
        "micro": {"enum": ["pca", "cnn", "none"]},
        "pca_basis": {"type": ["string", "null"]},
        "pca_k": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "epochs": {"type": "integer", "minimum": 1},
        "warmup_steps": {"type": "integer", "minimum": 1},
        "fine_tune": {"type": "boolean"},
        "init": {"type": ["string", "null"]},
        "seed": {"type": "integer", "minimum": 0},
        "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "clip_norm": {"type": "number", "minimum": 0},
        "truncate": {"type": "boolean"},
        "max_records": {"type": ["integer", "null"], "minimum": 1},
        "max_steps": {"type": ["integer", "null"], "minimum": 1},
        "time_limit": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "resume": {"type": "boolean"},
        "val_every": {"type": "integer", "minimum": 1},
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _path(p) -> Path:
    p = Path(p)
    base = os.environ.get(DATA_ENV)
    return p if p.is_absolute() or not base else Path(base) / p


def _jobs(args) -> int:
    from .pipeline.data import default_jobs
    return args.jobs if args.jobs else default_jobs()


# -- subcommands -------------------------------------------------------------------

def cmd_microgen(args) -> int:
    from .micro import JammingError, generate_sve, rasterize, write_pgm
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        target = out if args.count == 1 else out.with_name(f"{out.stem}_{i:04d}{out.suffix}")
        try:
            fibers = generate_sve(np.random.default_rng([args.seed, i]), args.fvr)
        except JammingError as err:
            logging.warning("%s", err)
            fibers = err.fibers
        write_pgm(rasterize(fibers, args.resolution), target)
        fibers.save(target.with_suffix(".json"))
        print(f"{target}: {len(fibers)} fibers, fvr {fibers.fvr:.6f}")
    return EXIT_OK


def cmd_pathgen(args) -> int:
    from .loadpath import cyclic_path, random_path
    from .pipeline import record_rng
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for i in range(args.n):
            rng = record_rng(args.seed, i)
            if args.kind == "random" or (args.kind == "mixed" and rng.random() < args.random_fraction):
                p = random_path(rng, args.steps)
            else:
                p = cyclic_path(rng, args.mode, args.steps)
            fh.write(json.dumps({"id": f"path-{args.seed}-{i:07d}", "kind": p.kind,
                                 "mode": p.mode, "strain": p.strain().tolist()}) + "\n")
    print(f"{out}: {args.n} paths")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .constitutive import FIBER, MATRIX, j2_path, mixture_path
    from .pipeline import SequenceRecord, generate_dataset
    out = _path(args.out)
    if args.generate:
        summary = generate_dataset(out, args.generate, args.n, seed=args.seed,
                                   random_fraction=args.random_fraction, jobs=_jobs(args))
        print(json.dumps(summary))
        return EXIT_OK
    if not args.paths:
        raise UsageError("simulate needs --paths or --generate")
    if args.material == "mixture" and args.fvr is None:
        raise ValueError("--material mixture needs --fvr")
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(_path(args.paths)) as src, open(out, "w") as fh:
        for line in src:
            if not line.strip():
                continue
            p = json.loads(line)
            strain = np.asarray(p["strain"], dtype=np.float64)
            if args.material == "mixture":
                stress, fvr = mixture_path(strain, args.fvr), args.fvr
            else:
                stress, fvr = j2_path(strain, MATRIX if args.material == "matrix" else FIBER)[0], 0.0
            rec = SequenceRecord(p["id"], strain, stress, p.get("kind", "random"), fvr)
            fh.write(json.dumps(rec.to_json()) + "\n")
            n += 1
    print(f"{out}: {n} records ({args.material})")
    return EXIT_OK


def cmd_fit_pca(args) -> int:
    from .descriptors import pca_fit
    from .pipeline import read_jsonl, split_records
    from .pipeline.train import micro_features
    recs = [r for r in read_jsonl(_path(args.dataset), limit=args.max_records) if r.grid is not None]
    if not recs:
        raise ValueError("dataset has no microstructure images")
    if not args.all_records:
        recs = split_records(recs)[0]
    basis = pca_fit(micro_features(recs), args.k, resolution=recs[0].grid.shape[0])
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    basis.save(out)
    with open(out.with_suffix(".variance.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "explained_variance_ratio", "cumulative"])
        for i, (r, c) in enumerate(zip(basis.explained_variance_ratio,
                                       np.cumsum(basis.explained_variance_ratio))):
            w.writerow([i + 1, f"{r:.9g}", f"{c:.9g}"])
    print(f"{out}: k={basis.k}, explained {np.round(basis.explained_variance_ratio, 4).tolist()}")
    return EXIT_OK


def load_run_config(path: Path) -> dict:
    import jsonschema
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON ({err})") from None
    jsonschema.validate(cfg, RUN_SCHEMA)
    for key in ("dataset", "output", "pca_basis", "init"):
        if cfg.get(key) and not Path(cfg[key]).is_absolute():
            cfg[key] = str(_path(cfg[key]) if os.environ.get(DATA_ENV) else path.parent / cfg[key])
    return cfg


def cmd_train(args) -> int:
    from .pipeline import TrainConfig, train
    cfg = TrainConfig.from_dict(load_run_config(_path(args.config)))
    if args.resume:
        cfg.resume = True
    if not Path(cfg.dataset).exists():
        raise ValueError(f"dataset {cfg.dataset} does not exist")
    result = train(cfg)
    summary = {"best_val_mse": result.best_val_mse, "best_epoch": result.best_epoch,
               "steps": result.steps, "epochs_run": len(result.history),
               "checkpoint": str(result.output / "best"), "seconds": round(result.elapsed, 1)}
    with open(result.output / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "train_mse", "val_mse", "lr"])
        for h in result.history:
            w.writerow([h["epoch"], h["step"], f"{h['train_mse']:.9g}",
                        f"{h['val_mse']:.9g}" if "val_mse" in h else "", f"{h['lr']:.9g}"])
    print(json.dumps(summary))
    return EXIT_OK


def cmd_predict(args) -> int:
    from .micro import read_pgm
    from .pipeline import SequenceRecord, load_checkpoint, predict_records
    ck = load_checkpoint(_path(args.checkpoint))
    src = _path(args.input)
    recs = []
    with open(src) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            d = json.loads(line)
            strain = np.asarray(d["strain"], dtype=np.float64)
            r = SequenceRecord(d.get("id", str(i)), strain, np.zeros((len(strain), 4)),
                               d.get("kind", "random"), d.get("fvr", 0.0), d.get("micro"))
            if r.micro is not None:
                r.grid = read_pgm(src.parent / r.micro).cells
            elif not ck.model.config.homogeneous:
                raise ValueError(f"record {r.id} lacks the microstructure this model needs")
            recs.append(r)
    preds = predict_records(ck, recs)
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for r, p in zip(recs, preds):
            fh.write(json.dumps({"id": r.id, "stress": p.tolist()}) + "\n")
    if args.csv_dir:
        d = _path(args.csv_dir)
        d.mkdir(parents=True, exist_ok=True)
        for r, p in zip(recs, preds):
            with open(d / f"{r.id}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["step", "E_xx", "E_yy", "E_xy", "S_xx", "S_yy", "S_zz", "S_xy"])
                for t, (e, s) in enumerate(zip(r.strain, p)):
                    w.writerow([t + 1, *(f"{v:.9g}" for v in (*e, *s))])
    print(f"{out}: {len(recs)} predictions")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .pipeline import evaluate, read_jsonl, split_records, write_report
    recs = read_jsonl(_path(args.dataset), limit=args.limit)
    if args.split == "validation":
        recs = split_records(recs)[1]
    if not recs:
        raise ValueError("no records to evaluate")
    metrics = evaluate(_path(args.checkpoint), recs, jobs=_jobs(args))
    out = _path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(metrics, out, out.with_suffix(".position.csv"))
    print(json.dumps({k: metrics[k] for k in ("rmse", "mean_record_rmse", "records", "stress_std")}))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run
    return EXIT_OK if run() else EXIT_NUMERIC


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="microformer", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("microgen", help="generate periodic fiber microcells")
    s.add_argument("--fvr", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="PGM path; fiber centers go next to it as JSON")
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--count", type=int, default=1)
    s.set_defaults(func=cmd_microgen)

    s = sub.add_parser("pathgen", help="sample stretch paths to JSONL")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--kind", choices=["random", "cyclic", "mixed"], default="mixed")
    s.add_argument("--mode", choices=["uniaxial-x", "uniaxial-y", "biaxial", "shear"])
    s.add_argument("--random-fraction", type=float, default=0.5)
    s.add_argument("--steps", type=int, default=100)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pathgen)

    s = sub.add_parser("simulate", help="stress responses for paths, or a full dataset")
    s.add_argument("--paths")
    s.add_argument("--material", choices=["matrix", "fiber", "mixture"], default="matrix")
    s.add_argument("--fvr", type=float)
    s.add_argument("--generate", choices=["homogeneous", "mixture"])
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--random-fraction", type=float)
    s.add_argument("--jobs", type=int, default=0, help="worker processes (default: all cores)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit-pca", help="fit the two-point statistics PCA basis")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--max-records", type=int)
    s.add_argument("--all-records", action="store_true", help="include the validation split")
    s.set_defaults(func=cmd_fit_pca)

    s = sub.add_parser("train", help="train from a JSON run configuration")
    s.add_argument("--config", required=True)
    s.add_argument("--resume", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="autoregressive stress prediction")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="JSONL with 'strain' (and 'micro') per line")
    s.add_argument("--out", required=True)
    s.add_argument("--csv-dir", help="also write one stress-strain CSV per record")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("eval", help="RMSE metrics of a checkpoint on a dataset")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["all", "validation"], default="all")
    s.add_argument("--limit", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("selftest", help="run the quick invariant suites")
    s.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    import jsonschema
    from .ndcore import NonFiniteError
    try:
        return args.func(args)
    except UsageError as err:
        print(f"microformer: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as err:
        print(f"microformer: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except jsonschema.ValidationError as err:
        print(f"microformer: invalid configuration: {err.message}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, FileNotFoundError) as err:
        print(f"microformer: invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
