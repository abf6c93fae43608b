#!/usr/bin/env python
"""
AHCL command-line toolkit

Usage:
    python run.py train    --data X.csv [--label-column -1] [--config run.env] [--out DIR]
    python run.py graph    --checkpoint DIR/model.ckpt --data X.csv --out Y.csv
    python run.py cluster  (--affinity Y.csv | --checkpoint CKPT --data X.csv | --data X.csv) --k 4 --method sc-y --out labels.txt
    python run.py eval     --labels labels.txt --truth truth.txt [--metrics-out metrics.jsonl]
    python run.py blobs    --k 4 --dim 16 --n-per-cluster 100 --out blobs.csv
    python run.py selftest
    python run.py ablate   --data usps.csv --label-column -1 [--seeds 0-9]

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical divergence.
Metrics go to stdout as JSON lines, logs go to stderr and logs/.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import LOG_DIR, LOG_LEVEL, load_run_config, setup_logging
from datasets import Dataset, load_csv, minmax_normalize, save_csv, synthetic_blobs
from evaluation import evaluate
from exceptions import AHCLError, DataError, ShapeMismatchError, UsageError
from file_manager import FileManager
from graph import CLUSTER_METHODS, AffinityGraph, affinity_from_embeddings, cluster
from report_generator import ReportGenerator, summarize_ablation
from selftest import CHECKS, run_selftest
from trainer import AHCLTrainer

logger = logging.getLogger("ahcl")

# RunConfig field -> command-line flag
CONFIG_FLAGS = {
    "margin": ("--margin", float),
    "gamma": ("--gamma", float),
    "lr": ("--lr", float),
    "epochs": ("--epochs", int),
    "batch_size": ("--batch-size", int),
    "batches_per_epoch": ("--batches-per-epoch", int),
    "embed_dim": ("--embed-dim", int),
    "encoder_hidden": ("--hidden", str),
    "seed": ("--seed", int),
    "decay_every": ("--decay-every", int),
    "decay_factor": ("--decay-factor", float),
    "epsilon": ("--epsilon", float),
    "tol": ("--tol", float),
    "loss": ("--loss", str),
    "loss_reduction": ("--reduction", str),
    "eval_every": ("--eval-every", int),
    "embed_radius": ("--radius", float),
    "embed_radius_start": ("--radius-start", float),
    "radius_warmup": ("--radius-warmup", int),
}


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(UsageError.exit_code, f"{self.prog}: error: {message}\n")


def emit(record: Dict[str, Any]) -> None:
    print(json.dumps(record), flush=True)


# ====== shared argument groups ======

def _add_data_arguments(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--data", required=required, help="CSV feature matrix")
    parser.add_argument("--header", action="store_true", help="CSV has a header line")
    parser.add_argument("--label-column", type=int, default=None, help="index of the ground-truth column")
    parser.add_argument("--no-minmax", action="store_true", help="skip per-feature min-max normalisation")


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    for name, (flag, kind) in CONFIG_FLAGS.items():
        parser.add_argument(flag, dest=name, type=kind, default=None)
    parser.add_argument("--no-normalize", dest="normalize_embeddings", action="store_const", const=False,
                        default=None, help="skip the projection onto the embedding sphere")


def _config_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    names = list(CONFIG_FLAGS) + ["normalize_embeddings"]
    return {name: getattr(args, name) for name in names if getattr(args, name, None) is not None}


def _load_dataset(args: argparse.Namespace) -> Dataset:
    dataset = load_csv(args.data, has_header=args.header, label_column=args.label_column)
    if not args.no_minmax:
        dataset = Dataset(minmax_normalize(dataset.x), dataset.labels, dataset.name)
    return dataset


def _run_dir(args: argparse.Namespace, name: str) -> Path:
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        return path
    return FileManager().get_or_create_run_directory(name)


def _encode(checkpoint: str, dataset: Dataset) -> np.ndarray:
    model = FileManager().load_checkpoint(checkpoint)
    if model.input_dim != dataset.dim:
        raise ShapeMismatchError(f"checkpoint expects {model.input_dim} features, dataset has {dataset.dim}")
    return model.encode(dataset.x)


# ====== commands ======

def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config, _config_overrides(args))
    dataset = _load_dataset(args)
    file_manager = FileManager()

    trainer = AHCLTrainer(config)
    result = trainer.train(dataset)
    trainer.print_stats()
    run_dir = _run_dir(args, dataset.name)

    checkpoint = file_manager.save_checkpoint(result.model, run_dir / "model.ckpt")
    trace_path = file_manager.save_trace(result.trace.to_records(), run_dir / "trace.csv")
    file_manager.write_text(run_dir / "config.json", json.dumps(config.to_dict(), indent=2))
    report = ReportGenerator(file_manager)
    content = report.generate_run_report_content(dataset.name, config.to_dict(), result.trace.to_records())
    report.save_report(run_dir, content, f"AHCL run {dataset.name}")

    last = result.trace.records[-1] if result.trace.records else None
    emit({"dataset": dataset.name, "checkpoint": str(checkpoint), "trace": str(trace_path),
          "epochs": len(result.trace), "stopped_early": result.stopped_early,
          "total": last.total if last else None})
    return 0


def cmd_graph(args: argparse.Namespace) -> int:
    dataset = _load_dataset(args)
    config = load_run_config(None, _config_overrides(args))
    z = _encode(args.checkpoint, dataset)
    graph = affinity_from_embeddings(z, config.margin, config.epsilon)
    path = FileManager().save_matrix(graph.y, args.out)
    emit({"dataset": dataset.name, "affinity": str(path), "n": graph.n})
    return 0


def cmd_cluster(args: argparse.Namespace) -> int:
    config = load_run_config(None, _config_overrides(args))
    file_manager = FileManager()
    affinity, features, name = None, None, None

    if args.affinity:
        if args.method != "sc-y":
            raise UsageError(f"--affinity only feeds sc-y, not {args.method}")
        affinity = AffinityGraph(file_manager.load_matrix(args.affinity))
        name = Path(args.affinity).stem
    elif args.data:
        dataset = _load_dataset(args)
        features = _encode(args.checkpoint, dataset) if args.checkpoint else dataset.x
        name = dataset.name
    else:
        raise UsageError("cluster needs --affinity, or --data (with an optional --checkpoint)")

    labels = cluster(args.method, args.k, seed=config.seed, features=features, affinity=affinity,
                     margin=config.margin, epsilon=config.epsilon)
    path = file_manager.save_labels(labels, args.out)
    emit({"dataset": name, "method": args.method, "seed": config.seed, "k": args.k, "labels": str(path)})
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    file_manager = FileManager()
    pred = file_manager.load_labels(args.labels)
    truth = file_manager.load_labels(args.truth)
    if pred.size != truth.size:
        raise ShapeMismatchError(f"label files differ in length: {pred.size} vs {truth.size}")
    record = evaluate(truth, pred).to_record(args.dataset, args.method, args.seed)
    if args.metrics_out:
        file_manager.append_metrics([record], args.metrics_out)
    emit(record)
    return 0


def cmd_blobs(args: argparse.Namespace) -> int:
    dataset = synthetic_blobs(args.n_per_cluster, args.k, args.dim, spread=args.spread,
                              separation=args.separation, seed=args.seed)
    path = save_csv(dataset, args.out, header=args.header)
    if args.truth_out:
        FileManager().save_labels(dataset.labels, args.truth_out)
    emit({"dataset": dataset.name, "path": str(path), "n": dataset.n, "dim": dataset.dim})
    return 0


def cmd_selftest(args: argparse.Namespace) -> int:
    unknown = [name for name in args.only or [] if name not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks: {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    report = run_selftest(args.only or None, seed=args.seed)
    print(report.to_text(), flush=True)
    return 0 if report.passed else 1


def parse_seeds(text: str) -> List[int]:
    """"0-9" or "0,3,7" -> list of seeds."""
    seeds: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                low, high = part.split("-", 1)
                seeds.extend(range(int(low), int(high) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise UsageError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def cmd_ablate(args: argparse.Namespace) -> int:
    base = load_run_config(args.config, _config_overrides(args))
    dataset = _load_dataset(args)
    if dataset.labels is None:
        raise DataError("ablation needs ground-truth labels (--label-column)")
    k = args.k or int(np.unique(dataset.labels).size)
    seeds = parse_seeds(args.seeds)
    run_dir = _run_dir(args, f"{dataset.name}_ablation")
    file_manager = FileManager()
    metrics_path = run_dir / "metrics.jsonl"

    records: List[Dict[str, Any]] = []
    for seed in seeds:
        logger.info(f"🧪 seed {seed}")
        features = {"surface": dataset.x}
        for loss in ("mse", "ahcl"):
            config = replace(base, seed=seed, loss=loss, eval_every=0)
            features[loss] = AHCLTrainer(config).train(dataset).model.encode(dataset.x)

        seed_records = []
        for feature_name, values in features.items():
            # soft labels need the learned embedding scale, raw features only get km-z / sc-z
            methods = [m for m in CLUSTER_METHODS if feature_name != "surface" or m != "sc-y"]
            for method in methods:
                labels = cluster(method, k, seed=seed, features=values, margin=base.margin, epsilon=base.epsilon)
                record = evaluate(dataset.labels, labels).to_record(dataset.name, method, seed)
                record["features"] = feature_name
                seed_records.append(record)
                emit(record)
        file_manager.append_metrics(seed_records, metrics_path)
        records.extend(seed_records)

    summary = summarize_ablation(records)
    file_manager.write_frame(run_dir / "summary.csv", summary)
    report = ReportGenerator(file_manager)
    content = report.generate_ablation_report_content(dataset.name, records, base.to_dict())
    report.save_report(run_dir, content, f"AHCL ablation {dataset.name}", stem="ablation")
    logger.info(f"🎉 ablation finished: {len(records)} records in {run_dir}")
    return 0


# ====== parser ======

def build_parser() -> CliParser:
    parser = CliParser(
        description="Adaptive homotopy contrastive learning toolkit",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], default=None,
                        help=f"default: AHCL_LOG_LEVEL or {LOG_LEVEL}")
    parser.add_argument("--log-dir", default=LOG_DIR, help="log file directory, '' for console only")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="train encoder/decoder, write checkpoint and trace")
    _add_data_arguments(train)
    _add_config_arguments(train)
    train.add_argument("--out", help="output directory (default runs/DATE/NAME)")
    train.set_defaults(handler=cmd_train)

    graph = commands.add_parser("graph", help="write the n x n soft-label affinity matrix")
    _add_data_arguments(graph)
    graph.add_argument("--checkpoint", required=True)
    graph.add_argument("--margin", type=float, default=None)
    graph.add_argument("--epsilon", type=float, default=None)
    graph.add_argument("--out", required=True)
    graph.set_defaults(handler=cmd_graph)

    clustering = commands.add_parser("cluster", help="run km-z, sc-z or sc-y and write one label per line")
    _add_data_arguments(clustering, required=False)
    clustering.add_argument("--affinity", help="affinity CSV from the graph command")
    clustering.add_argument("--checkpoint", help="encode --data with this model first")
    clustering.add_argument("--k", type=int, required=True)
    clustering.add_argument("--method", required=True)
    clustering.add_argument("--seed", type=int, default=None)
    clustering.add_argument("--margin", type=float, default=None)
    clustering.add_argument("--epsilon", type=float, default=None)
    clustering.add_argument("--out", required=True)
    clustering.set_defaults(handler=cmd_cluster)

    scoring = commands.add_parser("eval", help="ACC / NMI of a label file against ground truth")
    scoring.add_argument("--labels", required=True)
    scoring.add_argument("--truth", required=True)
    scoring.add_argument("--dataset", default=None)
    scoring.add_argument("--method", default=None)
    scoring.add_argument("--seed", type=int, default=None)
    scoring.add_argument("--metrics-out", help="append the record to this JSON-lines file")
    scoring.set_defaults(handler=cmd_eval)

    blobs = commands.add_parser("blobs", help="generate a synthetic Gaussian-cluster CSV")
    blobs.add_argument("--n-per-cluster", type=int, default=100)
    blobs.add_argument("--k", type=int, default=4)
    blobs.add_argument("--dim", type=int, default=16)
    blobs.add_argument("--spread", type=float, default=1.0)
    blobs.add_argument("--separation", type=float, default=12.0)
    blobs.add_argument("--seed", type=int, default=0)
    blobs.add_argument("--header", action="store_true")
    blobs.add_argument("--out", required=True, help="CSV path, labels in the last column")
    blobs.add_argument("--truth-out", help="also write the labels one per line")
    blobs.set_defaults(handler=cmd_blobs)

    selftest = commands.add_parser("selftest", help="run the embedded verification suite")
    selftest.add_argument("--only", nargs="+", help=f"subset of: {', '.join(CHECKS)}")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(handler=cmd_selftest)

    ablate = commands.add_parser("ablate", help="surface / MSE / AHCL features x KM-Z / SC-Z / SC-Y")
    _add_data_arguments(ablate)
    _add_config_arguments(ablate)
    ablate.add_argument("--seeds", default="0-9")
    ablate.add_argument("--k", type=int, default=None, help="clusters (default: number of true labels)")
    ablate.add_argument("--out", help="output directory (default runs/DATE/NAME_ablation)")
    ablate.set_defaults(handler=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or LOG_LEVEL, args.log_dir or None)
    try:
        return args.handler(args)
    except AHCLError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
