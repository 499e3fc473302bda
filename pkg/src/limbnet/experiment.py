"""End-to-end run: frames -> train -> evaluate -> one JSON report (+ figures)."""
from __future__ import annotations

import json
import logging
import time
from pathlib import Path
from typing import Callable

import numpy as np

from limbnet.dataset import Dataset
from limbnet.errors import ValidationError
from limbnet.metrics import ConfusionMatrix, MetricsReport, RocCurve, metrics_from_confusion, roc_auc
from limbnet.model import ModelConfig, ModelWeights, build_model, parameter_count
from limbnet.pipeline import STRIDE, SplitPlan, build_frames
from limbnet.train import EpochStats, TrainConfig, evaluate, latency_benchmark, train

log = logging.getLogger(__name__)

REPORT_VERSION = 1
TIMING_KEYS = ("latency", "elapsed_s")


def class_map(label_map: dict[str, int]) -> list[dict]:
    # 1-based class numbers sit next to the 0-based indices to avoid ambiguity
    return [{"index": i, "name": name, "class_number": i + 1}
            for name, i in sorted(label_map.items(), key=lambda kv: kv[1])]


def partition_report(weights: ModelWeights, frames, n_classes: int
                     ) -> tuple[ConfusionMatrix, MetricsReport, list[RocCurve]]:
    cm, probs = evaluate(weights, frames)
    report = metrics_from_confusion(cm)
    labels = np.array([f.label for f in frames])
    curves, aucs = [], []
    for c in range(n_classes):
        try:
            curve = roc_auc(probs, labels, c)
        except ValidationError:
            report.flags.append(f"auc[{c}]: class absent or alone in partition")
            aucs.append(None)
            continue
        curves.append(curve)
        aucs.append(curve.auc)
    report.auc = aucs
    return cm, report, curves


def run_experiment(dataset: Dataset, split: SplitPlan, model_config: ModelConfig | None = None,
                   train_config: TrainConfig | None = None, stride: int = STRIDE,
                   latency_iters: int = 200,
                   on_epoch: Callable[[EpochStats], None] | None = None
                   ) -> tuple[ModelWeights, dict]:
    """Train on the split's train subjects and score validation and test subjects.

    Returns the trained weights and the report dictionary. Timing fields
    (``latency``, ``elapsed_s``) are the only non-deterministic entries.
    """
    model_config = model_config or ModelConfig()
    train_config = train_config or TrainConfig()
    started = time.perf_counter()
    window = model_config.window_len
    denoise = train_config.denoise
    frames = {name: build_frames(dataset, split.partition(name), window, stride, denoise)
              for name in ("train", "val", "test")}
    log.info("frames: %s", {k: len(v) for k, v in frames.items()})
    for name in ("train", "val", "test"):
        if not frames[name]:
            raise ValidationError(f"{name} partition produced no windows")

    weights = build_model(model_config)
    weights, history = train(weights, frames["train"], frames["val"], train_config, on_epoch)

    cm_val, val_metrics, roc_val = partition_report(weights, frames["val"], model_config.n_classes)
    cm_test, test_metrics, roc_test = partition_report(weights, frames["test"],
                                                       model_config.n_classes)
    count = parameter_count(model_config)
    report = {
        "report_version": REPORT_VERSION,
        "config": {
            "model": model_config.to_dict(),
            "train": train_config.to_dict(),
            "pipeline": {"window_len": window, "stride": stride},
            "denoise": denoise.to_dict(),
            "class_map": class_map(dataset.label_map),
        },
        "split": split.to_dict(),
        "frame_counts": {k: len(v) for k, v in frames.items()},
        "parameter_count": {"total": count.total, "blocks": count.blocks},
        "epochs": [s.to_dict() for s in history],
        "val_metrics": val_metrics.to_dict(),
        "test_metrics": test_metrics.to_dict(),
        "confusion_val": cm_val.to_list(),
        "confusion_test": cm_test.to_list(),
        "roc": ([dict(c.to_dict(), partition="val") for c in roc_val]
                + [dict(c.to_dict(), partition="test") for c in roc_test]),
        "latency": latency_benchmark(weights, latency_iters) if latency_iters else None,
        "elapsed_s": time.perf_counter() - started,
    }
    return weights, report


def evaluation_report(weights: ModelWeights, dataset: Dataset, split: SplitPlan, partition: str,
                      stride: int = STRIDE, denoise=None) -> dict:
    """Metrics, confusion matrix and ROC data for one partition of an existing model."""
    frames = build_frames(dataset, split.partition(partition), weights.config.window_len, stride,
                          denoise)
    if not frames:
        raise ValidationError(f"{partition} partition produced no windows")
    cm, metrics, curves = partition_report(weights, frames, weights.config.n_classes)
    return {
        "report_version": REPORT_VERSION,
        "partition": partition,
        "config": {"model": weights.config.to_dict(),
                   "pipeline": {"window_len": weights.config.window_len, "stride": stride},
                   "denoise": denoise.to_dict() if denoise else None,
                   "class_map": class_map(dataset.label_map)},
        "split": split.to_dict(),
        "n_frames": len(frames),
        "metrics": metrics.to_dict(),
        "confusion": cm.to_list(),
        "roc": [dict(c.to_dict(), partition=partition) for c in curves],
    }


def strip_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in TIMING_KEYS}


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, allow_nan=False) + "\n", encoding="utf-8")


# minimal structural schema for the report artifacts (checked by the CLI tests)
REPORT_SCHEMA = {
    "type": "object",
    "required": ["report_version", "config", "split", "parameter_count", "epochs", "val_metrics",
                 "test_metrics", "confusion_val", "confusion_test", "roc", "latency"],
    "properties": {
        "report_version": {"const": REPORT_VERSION},
        "parameter_count": {"type": "object", "required": ["total", "blocks"]},
        "epochs": {"type": "array", "items": {
            "type": "object",
            "required": ["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy"]}},
        "val_metrics": {"$ref": "#/$defs/metrics"},
        "test_metrics": {"$ref": "#/$defs/metrics"},
        "confusion_val": {"$ref": "#/$defs/confusion"},
        "confusion_test": {"$ref": "#/$defs/confusion"},
        "roc": {"type": "array", "items": {"$ref": "#/$defs/roc"}},
    },
    "$defs": {
        "pct_list": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 100}},
        "metrics": {
            "type": "object",
            "required": ["precision", "recall", "f1", "accuracy", "balanced_accuracy", "auc"],
            "properties": {
                "precision": {"$ref": "#/$defs/pct_list"},
                "recall": {"$ref": "#/$defs/pct_list"},
                "f1": {"$ref": "#/$defs/pct_list"},
                "accuracy": {"type": "number", "minimum": 0, "maximum": 100},
                "balanced_accuracy": {"type": "number", "minimum": 0, "maximum": 100},
                "auc": {"type": "array",
                        "items": {"type": ["number", "null"], "minimum": 0, "maximum": 1}},
            },
        },
        "confusion": {"type": "array",
                      "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
        "roc": {"type": "object", "required": ["class", "fpr", "tpr", "auc", "partition"]},
    },
}

EVALUATION_SCHEMA = {
    "type": "object",
    "required": ["report_version", "partition", "metrics", "confusion", "roc"],
    "properties": {
        "report_version": {"const": REPORT_VERSION},
        "partition": {"enum": ["train", "val", "test"]},
        "metrics": {"$ref": "#/$defs/metrics"},
        "confusion": {"$ref": "#/$defs/confusion"},
        "roc": {"type": "array", "items": {"$ref": "#/$defs/roc"}},
    },
    "$defs": REPORT_SCHEMA["$defs"],
}
