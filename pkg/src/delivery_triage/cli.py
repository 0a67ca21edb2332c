"""Command-line entry points for every workflow.

Each subcommand is a thin wrapper over one module operation.  Human
readable progress goes to earlier lines; the final stdout line is
always a single JSON object summarizing the run.  Exit codes: 0 on
success, 1 on user error (bad flags, missing or malformed inputs),
2 on internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .cnn import CnnModel, CnnTrainConfig, evaluate_cnn, load_cnn_model, predict_image, save_cnn_model, train_cnn
from .datasets import FeedbackRecord, filter_for_training, load_dataset, save_dataset, stratified_split, summarize
from .explain import grad_cam, overlay
from .generator import GeneratorConfig, generate_synthetic
from .numerics import OptimizerConfig
from .ppm import read_ppm, write_ppm
from .text_model import evaluate_text, load_embedding_table, load_text_model, save_text_model, train_text
from .triage import CaseStore, TriageConfig, run_pipeline

DATA_DIR_ENV = "DELIVERY_TRIAGE_DATA"
DATASET_FILENAME = "dataset.jsonl"
JOURNAL_FILENAME = "journal.jsonl"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit 1 instead of 2."""

    def error(self, message):
        raise _UsageError(message)


def _default_data_dir() -> str:
    return os.environ.get(DATA_DIR_ENV, "data")


def _build_parser() -> _Parser:
    parser = _Parser(prog="delivery-triage", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="write a synthetic labeled corpus")
    p.add_argument("--n-text", type=int, default=0, help="number of text-only records")
    p.add_argument("--n-images", type=int, default=0, help="number of records with a rendered photo")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=_default_data_dir(), help="output directory")
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument(
        "--overlap",
        action="store_true",
        help="share wording between Late Delivery and Not Received",
    )

    p = sub.add_parser("train-text", help="fit the comment classifier")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--featurizer", default="tfidf", choices=("counts", "tfidf", "embedding_average"))
    p.add_argument("--embeddings", default=None, help="embedding table file (embedding_average only)")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-df", type=int, default=2)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--test-fraction", type=float, default=0.0, help="hold out a test split and report accuracy")

    p = sub.add_parser("eval-text", help="score the comment classifier on a labeled file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("train-image", help="fit one binary image classifier")
    p.add_argument("--data", required=True, help="dataset file with image records")
    p.add_argument("--task", required=True, choices=("relevance", "damage"))
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--augment-prob", type=float, default=0.5)
    p.add_argument("--freeze-k", type=int, default=None, help="train only the last K parameterized layers")

    p = sub.add_parser("eval-image", help="score an image classifier on a labeled file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("explain", help="write a heatmap overlay for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="overlay pixmap to write")
    p.add_argument("--target-class", default=None, help="class to explain (default: predicted)")
    p.add_argument("--alpha", type=float, default=0.4)

    p = sub.add_parser("triage", help="run the full pipeline over a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--text-model", required=True)
    p.add_argument("--relevance-model", required=True)
    p.add_argument("--damage-model", required=True)
    p.add_argument("--out", default=_default_data_dir(), help="data directory for journal and heatmaps")
    p.add_argument("--tau-text", type=float, default=0.7)
    p.add_argument("--tau-image", type=float, default=0.7)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--data-dir", default=_default_data_dir())
    p.add_argument("--text-model", required=True)
    p.add_argument("--relevance-model", required=True)
    p.add_argument("--damage-model", required=True)
    p.add_argument("--tau-text", type=float, default=0.7)
    p.add_argument("--tau-image", type=float, default=0.7)

    p = sub.add_parser("stats", help="summarize the case journal")
    p.add_argument("--data-dir", default=_default_data_dir())

    return parser


def _cmd_gen_data(args) -> dict:
    out = Path(args.out)
    config = GeneratorConfig(
        n_text=args.n_text,
        n_images=args.n_images,
        seed=args.seed,
        out_dir=str(out),
        overlap_late_not_received=args.overlap,
        image_size=args.image_size,
    )
    records = generate_synthetic(config)
    dataset_path = out / DATASET_FILENAME
    save_dataset(records, dataset_path)
    summary = summarize(records)
    for label in sorted(summary.counts):
        print(f"{label}: {summary.counts[label]} ({summary.percentages[label]:.2f}%)")
    return {
        "command": "gen-data",
        "dataset": str(dataset_path),
        "text_records": sum(1 for r in records if r.image_path is None),
        "image_records": sum(1 for r in records if r.image_path is not None),
        "seed": args.seed,
        "overlap": args.overlap,
    }


def _cmd_train_text(args) -> dict:
    records = filter_for_training(load_dataset(args.data))
    test_records: list[FeedbackRecord] = []
    if args.test_fraction > 0.0:
        records, test_records = stratified_split(records, args.test_fraction, seed=args.seed)
    table = load_embedding_table(args.embeddings) if args.embeddings else None
    model = train_text(
        records,
        featurizer=args.featurizer,
        optimizer=OptimizerConfig(learning_rate=args.learning_rate, l2_penalty=args.l2),
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        min_df=args.min_df,
        embedding_table=table,
    )
    save_text_model(model, args.out)
    summary = {
        "command": "train-text",
        "model": str(args.out),
        "featurizer": args.featurizer,
        "train_records": len(records),
        "epochs": args.epochs,
        "final_loss": model.epoch_losses[-1],
    }
    if test_records:
        report = evaluate_text(model, test_records)
        summary["test_records"] = len(test_records)
        summary["test_accuracy"] = report.accuracy
    return summary


def _cmd_eval_text(args) -> dict:
    model = load_text_model(args.model)
    records = filter_for_training(load_dataset(args.data), model.taxonomy)
    report = evaluate_text(model, records)
    for name in sorted(report.per_class_accuracy):
        print(f"{name}: {report.per_class_accuracy[name]:.4f}")
    return {
        "command": "eval-text",
        "records": len(records),
        "accuracy": report.accuracy,
        "per_class_accuracy": report.per_class_accuracy,
    }


def _image_examples(data_path, task: str) -> tuple[np.ndarray, list[str]]:
    """Collect (image array, task label) pairs from a dataset file.

    For the relevance task every package render counts as relevant; the
    damage task keeps only the damaged/not_damaged renders.
    """
    root = Path(data_path).parent
    images: list[np.ndarray] = []
    labels: list[str] = []
    for record in load_dataset(data_path):
        if record.image_path is None or record.image_label is None:
            continue
        if task == "relevance":
            label = "irrelevant" if record.image_label == "irrelevant" else "relevant"
        else:
            if record.image_label not in ("damaged", "not_damaged"):
                continue
            label = record.image_label
        image = read_ppm(root / record.image_path)
        if image.shape[2] == 1:
            image = np.repeat(image, 3, axis=2)
        images.append(image)
        labels.append(label)
    if not images:
        raise ValueError(f"{data_path}: no usable image records for task {task!r}")
    return np.stack(images), labels


def _cmd_train_image(args) -> dict:
    images, labels = _image_examples(args.data, args.task)
    config = CnnTrainConfig(
        epochs=args.epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        optimizer=OptimizerConfig(learning_rate=args.learning_rate),
        val_fraction=args.val_fraction,
        seed=args.seed,
        freeze_k=args.freeze_k,
        augment_probability=args.augment_prob,
    )
    model, run = train_cnn(images, labels, args.task, config)
    save_cnn_model(model, args.out)
    return {
        "command": "train-image",
        "task": args.task,
        "model": str(args.out),
        "examples": len(labels),
        "epochs_run": len(run.train_losses),
        "best_epoch": run.best_epoch,
        "best_validation_loss": run.best_validation_loss,
        "stopped_early": run.stopped_early,
    }


def _task_of(model: CnnModel) -> str:
    return "relevance" if "relevant" in model.classes else "damage"


def _cmd_eval_image(args) -> dict:
    model = load_cnn_model(args.model)
    task = _task_of(model)
    images, labels = _image_examples(args.data, task)
    accuracy, matrix = evaluate_cnn(model, images, labels)
    return {
        "command": "eval-image",
        "task": task,
        "records": len(labels),
        "accuracy": accuracy,
        "confusion_matrix": matrix.tolist(),
        "classes": list(model.classes),
    }


def _cmd_explain(args) -> dict:
    model = load_cnn_model(args.model)
    image = read_ppm(args.image)
    if image.shape[2] == 1:
        image = np.repeat(image, 3, axis=2)
    if image.shape[:2] != (model.input_size, model.input_size):
        from .imageops import resize_bilinear

        image = resize_bilinear(image, model.input_size, model.input_size)
    predicted, probs = predict_image(model, image)
    target = args.target_class if args.target_class is not None else predicted
    if target not in model.classes:
        raise ValueError(f"unknown class {target!r}; model classes are {list(model.classes)}")
    heatmap = grad_cam(model, image, model.classes.index(target))
    blended = overlay(image, heatmap, alpha=args.alpha)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ppm(blended, out)
    peak = np.unravel_index(int(np.argmax(heatmap.values)), heatmap.values.shape)
    return {
        "command": "explain",
        "predicted_class": predicted,
        "confidence": float(np.max(probs)),
        "target_class": target,
        "overlay": str(out),
        "heatmap_peak": [int(peak[0]), int(peak[1])],
    }


def _cmd_triage(args) -> dict:
    text_model = load_text_model(args.text_model)
    relevance_model = load_cnn_model(args.relevance_model)
    damage_model = load_cnn_model(args.damage_model)
    config = TriageConfig(tau_text=args.tau_text, tau_image=args.tau_image)
    records = load_dataset(args.data)
    store = CaseStore(Path(args.out) / JOURNAL_FILENAME)
    counts = {"auto_resolved": 0, "escalated": 0}
    warning_count = 0
    for record in records:
        case = run_pipeline(
            record,
            text_model,
            relevance_model,
            damage_model,
            config,
            store,
            image_root=Path(args.data).parent,
        )
        counts[case.state] += 1
        warning_count += len(case.warnings)
    return {
        "command": "triage",
        "journal": str(store.path),
        "cases": len(records),
        "auto_resolved": counts["auto_resolved"],
        "escalated": counts["escalated"],
        "warnings": warning_count,
    }


def _cmd_serve(args) -> dict:
    from .api import ServiceConfig, create_app

    config = ServiceConfig(
        data_dir=Path(args.data_dir),
        text_model_path=Path(args.text_model),
        relevance_model_path=Path(args.relevance_model),
        damage_model_path=Path(args.damage_model),
        host=args.host,
        port=args.port,
        triage=TriageConfig(tau_text=args.tau_text, tau_image=args.tau_image),
    )
    app = create_app(config)
    # the summary precedes serving because this subcommand only returns on shutdown
    print(
        json.dumps(
            {
                "command": "serve",
                "host": config.host,
                "port": config.port,
                "data_dir": str(config.data_dir),
            },
            separators=(",", ":"),
        ),
        flush=True,
    )
    import uvicorn

    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return {}


def _cmd_stats(args) -> dict:
    store = CaseStore(Path(args.data_dir) / JOURNAL_FILENAME)
    stats = store.stats()
    for state, count in stats["by_state"].items():
        print(f"{state}: {count}")
    return {"command": "stats", **stats}


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train-text": _cmd_train_text,
    "eval-text": _cmd_eval_text,
    "train-image": _cmd_train_image,
    "eval-image": _cmd_eval_image,
    "explain": _cmd_explain,
    "triage": _cmd_triage,
    "serve": _cmd_serve,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        summary = _HANDLERS[args.command](args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        print("internal error", file=sys.stderr)
        return 2
    if summary:
        print(json.dumps(summary, separators=(",", ":")), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
