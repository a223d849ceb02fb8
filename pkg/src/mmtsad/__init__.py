"""Multimodal time-series anomaly detection.

A detector for entities emitting many correlated sensor series of mixed
modalities: graph structure learning over per-series embeddings, multimodal
graph attention, temporal convolution, jointly trained reconstruction and
prediction heads, extreme-value thresholding, and per-sensor anomaly
attribution. Pure numpy/scipy, deterministic under a seed.
"""

__version__ = "0.1.0"

from .config import AblationFlags, DetectorConfig, config_hash, load_config
from .data import (
    AnomalyEvent,
    NormStats,
    SynthSpec,
    TimeSeriesDataset,
    WindowBatch,
    load_dataset,
    make_windows,
    normalize,
    synthesize,
    synthesize_ex,
)
from .errors import CheckpointError, DataError, NumericError
from .graph import GraphTopology, build_adjacency, build_modal_adjacency, cosine_similarity, rebuild_topology
from .metrics import auc, f1_score, point_adjust, precision_recall_f1
from .pipeline import detect_on, evaluate, explain_report, fit_detector
from .scoring import (
    ScoreTrace,
    detect,
    interpret,
    per_sensor_scores,
    pot_threshold,
    score_series,
)
from .training import (
    EpochStats,
    ModelState,
    joint_loss,
    load_checkpoint,
    save_checkpoint,
    split_train_val,
    train,
)

__all__ = [
    "__version__",
    "AblationFlags",
    "DetectorConfig",
    "config_hash",
    "load_config",
    "AnomalyEvent",
    "NormStats",
    "SynthSpec",
    "TimeSeriesDataset",
    "WindowBatch",
    "load_dataset",
    "make_windows",
    "normalize",
    "synthesize",
    "synthesize_ex",
    "CheckpointError",
    "DataError",
    "NumericError",
    "GraphTopology",
    "build_adjacency",
    "build_modal_adjacency",
    "cosine_similarity",
    "rebuild_topology",
    "auc",
    "f1_score",
    "point_adjust",
    "precision_recall_f1",
    "detect_on",
    "evaluate",
    "explain_report",
    "fit_detector",
    "ScoreTrace",
    "detect",
    "interpret",
    "per_sensor_scores",
    "pot_threshold",
    "score_series",
    "EpochStats",
    "ModelState",
    "joint_loss",
    "load_checkpoint",
    "save_checkpoint",
    "split_train_val",
    "train",
]
