"""Joint training of the reconstruction and prediction objectives.

One logical thread owns the parameters. Every run is a pure function of the
seed: parameter init, batch order, and latent noise come from separate
child streams of one seed sequence, so identical seeds give identical
checkpoints byte for byte.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass

import numpy as np

from . import network
from .config import DetectorConfig
from .data import NormStats, TimeSeriesDataset, fit_norm_stats, stack_windows, window_ends
from .errors import CheckpointError, NumericError
from .graph import GraphTopology, rebuild_topology
from .network import joint_loss  # noqa: F401  (public here as part of this module's API)

__all__ = [
    "EpochStats",
    "ModelState",
    "Adam",
    "joint_loss",
    "split_train_val",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "mmtsad-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class EpochStats:
    epoch: int
    l_rec: float
    l_pred: float
    l_joint: float


@dataclass
class ModelState:
    """Everything needed to score new data: parameters, scaling, topology."""

    config: DetectorConfig
    names: tuple[str, ...]
    modality: tuple[int, ...]
    params: network.Params
    norm: NormStats
    topology: GraphTopology
    val_scores: np.ndarray | None = None   # aggregate scores on the held-out tail

    @property
    def n_series(self) -> int:
        return len(self.names)


class Adam:
    """Adaptive-moment optimizer over one flat parameter vector."""

    def __init__(self, size: int, dtype, lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self._scratch = np.empty(size, dtype=dtype)

    def step(self, param_vec: np.ndarray, grad_vec: np.ndarray) -> None:
        self.t += 1
        # plain-float scalars keep the update in the parameters' dtype
        correction = float(np.sqrt(1.0 - self.b2**self.t) / (1.0 - self.b1**self.t))
        lr_t = self.lr * correction
        s = self._scratch
        self.m *= self.b1
        np.multiply(grad_vec, 1.0 - self.b1, out=s)
        self.m += s
        self.v *= self.b2
        np.square(grad_vec, out=s)
        s *= 1.0 - self.b2
        self.v += s
        np.sqrt(self.v, out=s)
        s += self.eps
        np.divide(self.m, s, out=s)
        s *= lr_t
        param_vec -= s


def clip_global_norm(grad_vec: np.ndarray, max_norm: float) -> float:
    """Scale the gradient vector so its 2-norm is at most max_norm."""
    norm = float(np.sqrt(np.dot(grad_vec, grad_vec, out=None)))
    if max_norm > 0 and norm > max_norm:
        grad_vec *= max_norm / norm
    return norm


def split_train_val(
    ds: TimeSeriesDataset, fraction: float
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Hold out the trailing `fraction` of training timestamps for calibration."""
    t_total = ds.n_timestamps
    cut = t_total - max(1, int(round(fraction * t_total)))
    if cut < 2:
        raise ValueError("training split too short to hold out a validation tail")
    return ds.slice_time(0, cut), ds.slice_time(cut, t_total)


def train(
    train_ds: TimeSeriesDataset,
    val_ds: TimeSeriesDataset | None,
    config: DetectorConfig,
) -> tuple[ModelState, list[EpochStats]]:
    """Optimize all parameters on anomaly-free training data.

    `train_ds` is raw (unnormalized); scaling statistics are fitted here and
    stored in the returned state. `val_ds` is the held-out tail of the
    training split; after the last epoch it is scored with the trained model
    and the resulting aggregate scores are kept on the state for threshold
    calibration. Returns the final state and the per-epoch loss trace.
    """
    cfg = config
    dtype = cfg.np_dtype()
    n = train_ds.n_series
    w = cfg.window

    stats = fit_norm_stats(train_ds)
    values = (
        (train_ds.values - stats.offset[:, None]) / stats.scale[:, None]
    ).astype(dtype)
    t_total = values.shape[1]
    if t_total < w + 1:
        raise ValueError("training split shorter than one window plus a target")

    ends = window_ends(t_total, w, cfg.stride)
    ends = ends[ends + 1 < t_total]  # prediction target must exist
    if ends.size == 0:
        raise ValueError("no trainable windows; reduce window or stride")

    seq = np.random.SeedSequence(cfg.seed)
    rng_init, rng_order, rng_noise = (np.random.default_rng(s) for s in seq.spawn(3))
    param_vec, params = network.pack_params(network.init_params(cfg, n, rng_init))
    grad_vec, grads = network.zeros_like_packed(params)
    optimizer = Adam(param_vec.size, dtype, lr=cfg.lr)

    trace: list[EpochStats] = []
    topo = None
    for epoch in range(1, cfg.epochs + 1):
        topo = rebuild_topology(
            np.asarray(params["V"], dtype=np.float64), train_ds.modality, cfg.topk
        )
        kl_weight = (
            1.0 if cfg.kl_warmup_epochs <= 0
            else min(1.0, epoch / cfg.kl_warmup_epochs)
        )
        perm = rng_order.permutation(ends.size)
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, ends.size, cfg.batch):
            chosen = ends[perm[start : start + cfg.batch]]
            windows = stack_windows(values, chosen, w)
            next_values = values[:, chosen + 1].T
            eps = rng_noise.standard_normal(
                (cfg.mc_samples_train, chosen.size, cfg.latent_dim)
            ).astype(dtype)
            grad_vec.fill(0.0)
            loss, l_rec, l_pred, _ = network.loss_and_grads(
                params, cfg, topo, windows, next_values, eps, kl_weight,
                out_grads=grads,
            )
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            clip_global_norm(grad_vec, cfg.clip_norm)
            optimizer.step(param_vec, grad_vec)
            sums += (l_rec, l_pred, loss)
            n_batches += 1
        trace.append(EpochStats(epoch, *(sums / n_batches)))

    topo = rebuild_topology(
        np.asarray(params["V"], dtype=np.float64), train_ds.modality, cfg.topk
    )
    state = ModelState(
        config=cfg,
        names=train_ds.names,
        modality=train_ds.modality,
        params=params,
        norm=stats,
        topology=topo,
    )
    if val_ds is not None and val_ds.n_timestamps > w:
        from .data import TEST_CLIP, apply_norm
        from .scoring import score_series

        val_trace = score_series(
            state, apply_norm(val_ds, stats, clip=TEST_CLIP), threshold=np.inf
        )
        state.val_scores = val_trace.scores[w:].astype(np.float64)
    return state, trace


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(state: ModelState, path) -> None:
    """Serialize a model state; identical states produce identical bytes."""
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": state.config.to_dict(),
        "names": list(state.names),
        "modality": list(state.modality),
        "topology_k": state.topology.K,
    }
    arrays: dict[str, np.ndarray] = {}
    for p, a in network.flat_items(state.params):
        arrays["p:" + p] = a
    arrays["norm:offset"] = state.norm.offset
    arrays["norm:scale"] = state.norm.scale
    arrays["norm:constant"] = state.norm.constant
    arrays["topo:A"] = state.topology.A
    arrays["topo:A_intra"] = state.topology.A_intra
    arrays["topo:A_inter"] = state.topology.A_inter
    if state.val_scores is not None:
        arrays["val_scores"] = state.val_scores
    ordered = {"__meta__": np.str_(json.dumps(meta, sort_keys=True))}
    for key in sorted(arrays):
        ordered[key] = arrays[key]
    with open(path, "wb") as fh:
        np.savez(fh, **ordered)


def load_checkpoint(path) -> ModelState:
    """Load a checkpoint saved by save_checkpoint; bit-exact round trip."""
    try:
        with np.load(path, allow_pickle=False) as zf:
            data = {k: zf[k] for k in zf.files}
    except (OSError, ValueError, zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if "__meta__" not in data:
        raise CheckpointError(f"{path} is not a detector checkpoint")
    meta = json.loads(str(data["__meta__"]))
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a detector checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path} has checkpoint version {meta.get('version')}, "
            f"this build reads version {CHECKPOINT_VERSION}"
        )
    cfg = DetectorConfig.from_dict(meta["config"])
    params: network.Params = {}
    for key, value in data.items():
        if not key.startswith("p:"):
            continue
        path_parts = key[2:].split("/", 1)
        if len(path_parts) == 1:
            params[path_parts[0]] = value
        else:
            params.setdefault(path_parts[0], {})[path_parts[1]] = value
    required = {"norm:offset", "norm:scale", "norm:constant",
                "topo:A", "topo:A_intra", "topo:A_inter"}
    missing = required - set(data)
    if missing:
        raise CheckpointError(f"{path} is missing entries: {sorted(missing)}")
    norm = NormStats(
        offset=data["norm:offset"], scale=data["norm:scale"],
        constant=data["norm:constant"],
    )
    topo = GraphTopology(
        A=data["topo:A"], A_intra=data["topo:A_intra"],
        A_inter=data["topo:A_inter"], K=int(meta["topology_k"]),
    )
    return ModelState(
        config=cfg,
        names=tuple(meta["names"]),
        modality=tuple(int(m) for m in meta["modality"]),
        params=params,
        norm=norm,
        topology=topo,
        val_scores=data.get("val_scores"),
    )
