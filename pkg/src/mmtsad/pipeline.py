"""High-level orchestration: fit on raw data, detect, evaluate, explain."""

from __future__ import annotations

import json

import numpy as np

from . import mgat
from .config import DetectorConfig
from .data import TEST_CLIP, TimeSeriesDataset, apply_norm, stack_windows, window_ends
from .errors import DataError
from .metrics import auc, point_adjust, precision_recall_f1
from .scoring import ScoreTrace, align_series, interpret, score_series
from .training import EpochStats, ModelState, split_train_val, train

__all__ = [
    "fit_detector",
    "detect_on",
    "evaluate",
    "explain_report",
    "export_attention_jsonl",
]


def fit_detector(
    train_ds: TimeSeriesDataset, config: DetectorConfig
) -> tuple[ModelState, list[EpochStats]]:
    """Split off the validation tail, train, and calibrate validation scores."""
    head, tail = split_train_val(train_ds, config.val_fraction)
    return train(head, tail, config)


def detect_on(state: ModelState, test_ds: TimeSeriesDataset) -> ScoreTrace:
    """Normalize a raw test dataset with the model's statistics and score it.

    Series are aligned to the model's order by name first.
    """
    aligned = align_series(test_ds, state)
    normalized = apply_norm(aligned, state.norm, clip=TEST_CLIP)
    return score_series(state, normalized)


def evaluate(trace: ScoreTrace, labels: np.ndarray) -> dict:
    """Metrics report for a scored trace against 0/1 labels.

    The warm-up region (first `window` timestamps, never scored) is excluded.
    Both the raw protocol and the point-adjusted protocol are reported side
    by side; point adjustment is not applied to the headline numbers.
    """
    labels = np.asarray(labels).astype(np.int8)
    if labels.shape[0] != trace.n_timestamps:
        raise DataError("labels length does not match the trace")
    keep = slice(trace.warmup, None)
    truth = labels[keep]
    pred = trace.detections[keep]
    scores = trace.scores[keep]

    prec, rec, f1 = precision_recall_f1(pred, truth)
    report: dict = {
        "threshold": trace.threshold,
        "raw": {"precision": prec, "recall": rec, "f1": f1},
        "protocol": {
            "point_adjust_applied_to_headline": False,
            "warmup_excluded": int(trace.warmup),
        },
    }
    if 0 < truth.sum() < truth.size:
        report["auc"] = auc(scores, truth)
        pa_pred = point_adjust(pred, truth)
        pa = precision_recall_f1(pa_pred, truth)
        report["point_adjusted"] = {
            "precision": pa[0], "recall": pa[1], "f1": pa[2]
        }
    else:
        report["auc"] = None
        report["point_adjusted"] = None
    return report


def explain_report(trace: ScoreTrace, interval: tuple[int, int]) -> dict:
    """Ranked per-sensor attribution over an interval; top-1 is the verdict."""
    ranked = interpret(trace, interval)
    return {
        "interval": [int(interval[0]), int(interval[1])],
        "ranked": [{"series": name, "mean_score": score} for name, score in ranked],
        "top1": ranked[0][0],
    }


def export_attention_jsonl(
    state: ModelState,
    test_ds: TimeSeriesDataset,
    path,
    batch_size: int = 128,
) -> int:
    """Write one JSON record per window with its attention coefficients.

    Each record carries, per layer, the per-head neighbor weights and the
    relational weights of both modal branches. Returns the record count.
    """
    cfg = state.config
    w = cfg.window
    normalized = apply_norm(align_series(test_ds, state), state.norm, clip=TEST_CLIP)
    values = normalized.values.astype(cfg.np_dtype())
    ends = window_ends(values.shape[1], w, 1)
    written = 0
    with open(path, "w") as fh:
        for start in range(0, ends.size, batch_size):
            chosen = ends[start : start + batch_size]
            windows = stack_windows(values, chosen, w)
            _, caches = mgat.mgat_forward(
                windows, state.params["V"], state.topology, state.params["mgat"],
                cfg, final_summary=False,
            )
            for b, t_end in enumerate(chosen):
                layers = []
                for layer_cache in caches["layers"]:
                    att = layer_cache["att"]
                    entry = {
                        "alpha": [
                            np.asarray(a[b], dtype=np.float64).tolist()
                            for a in att["alphas"]
                        ]
                    }
                    for rel, rel_cache in layer_cache["rel"].items():
                        entry[f"beta_{rel}"] = np.asarray(
                            rel_cache["score"]["beta"], dtype=np.float64
                        ).tolist()
                    layers.append(entry)
                fh.write(json.dumps({"t_end": int(t_end), "layers": layers}) + "\n")
                written += 1
    return written
