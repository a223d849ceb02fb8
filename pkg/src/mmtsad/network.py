"""End-to-end network: attention stack -> temporal stack -> joint heads.

Parameters live in a two-level dict: top-level groups "V" (embeddings),
"mgat", "temporal", "vae", "pred"; each group maps names to arrays. The
whole forward pass is a pure function of (params, topology, batch, noise),
so gradients can be validated against finite differences.
"""

from __future__ import annotations

import numpy as np

from . import heads, mgat, temporal
from .config import DetectorConfig
from .graph import GraphTopology, init_embeddings

__all__ = [
    "init_params",
    "zero_grads",
    "flat_items",
    "joint_loss",
    "forward_scores",
    "loss_and_grads",
]

Params = dict[str, dict[str, np.ndarray] | np.ndarray]


def init_params(cfg: DetectorConfig, n_series: int, rng: np.random.Generator) -> Params:
    dtype = cfg.np_dtype()
    return {
        "V": init_embeddings(n_series, cfg.embed_dim, rng).astype(dtype),
        "mgat": mgat.init_mgat_params(cfg, rng, dtype),
        "temporal": temporal.init_temporal_params(cfg, rng, dtype),
        "vae": heads.init_vae_params(cfg, n_series, rng, dtype),
        "pred": heads.init_predictor_params(cfg, rng, dtype),
    }


def zero_grads(params: Params) -> Params:
    out: Params = {}
    for group, value in params.items():
        if isinstance(value, dict):
            out[group] = {k: np.zeros_like(a) for k, a in value.items()}
        else:
            out[group] = np.zeros_like(value)
    return out


def flat_items(params: Params):
    """Yield (path, array) pairs in a stable order."""
    for group in sorted(params):
        value = params[group]
        if isinstance(value, dict):
            for key in sorted(value):
                yield f"{group}/{key}", value[key]
        else:
            yield group, value


def pack_params(params: Params) -> tuple[np.ndarray, Params]:
    """Copy parameters into one contiguous vector and rebuild the dict as
    views into it, so whole-model updates are single-pass operations."""
    items = list(flat_items(params))
    total = sum(a.size for _, a in items)
    vector = np.empty(total, dtype=items[0][1].dtype)
    views: Params = {}
    pos = 0
    for path, a in items:
        view = vector[pos : pos + a.size].reshape(a.shape)
        view[...] = a
        group, _, key = path.partition("/")
        if key:
            views.setdefault(group, {})[key] = view
        else:
            views[group] = view
        pos += a.size
    return vector, views


def zeros_like_packed(params: Params) -> tuple[np.ndarray, Params]:
    """One zero vector plus a grads dict of views into it (same layout)."""
    vector, views = pack_params(params)
    vector.fill(0.0)
    return vector, views


def joint_loss(l_rec: float, l_pred: float, gamma1: float) -> float:
    """Convex combination of the reconstruction and prediction losses."""
    return gamma1 * l_rec + (1.0 - gamma1) * l_pred


def _forward(
    params: Params,
    cfg: DetectorConfig,
    topology: GraphTopology,
    windows: np.ndarray,
    eps: np.ndarray,
    final_summary: bool,
):
    feat, mgat_cache = mgat.mgat_forward(
        windows, params["V"], topology, params["mgat"], cfg,
        final_summary=final_summary,
    )
    x_feat, temporal_cache = temporal.temporal_forward(
        feat.timewise, params["temporal"], cfg
    )
    target = windows[:, :, -1]
    p, elbo, vae_cache = heads.vae_forward(x_feat, target, params["vae"], eps)
    forecasts, pred_cache = heads.predict_next(x_feat, params["V"], params["pred"])
    caches = {
        "mgat": mgat_cache,
        "temporal": temporal_cache,
        "vae": vae_cache,
        "pred": pred_cache,
        "x_feat_shape": x_feat.shape,
    }
    return p, elbo, forecasts, caches


def forward_scores(
    params: Params,
    cfg: DetectorConfig,
    topology: GraphTopology,
    windows: np.ndarray,
    eps: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Inference pass: per-series reconstruction probabilities for the
    windows' last observations and forecasts for the following timestamp."""
    p, _, forecasts, _ = _forward(params, cfg, topology, windows, eps,
                                  final_summary=False)
    return p, forecasts


def loss_and_grads(
    params: Params,
    cfg: DetectorConfig,
    topology: GraphTopology,
    windows: np.ndarray,
    next_values: np.ndarray,
    eps: np.ndarray,
    kl_weight: float = 1.0,
    out_grads: Params | None = None,
) -> tuple[float, float, float, Params]:
    """Joint loss over a window batch and its gradients.

    Returns (loss, l_rec, l_pred, grads) where grads mirrors the parameter
    structure. `next_values` holds the observation following each window.
    Pass zeroed `out_grads` to accumulate in place and skip reallocation.
    """
    p, elbo, forecasts, caches = _forward(
        params, cfg, topology, windows, eps, final_summary=False
    )
    l_rec = heads.reconstruction_loss(elbo, kl_weight)
    l_pred = heads.prediction_loss(forecasts, next_values)
    loss = joint_loss(l_rec, l_pred, cfg.gamma1)

    grads = zero_grads(params) if out_grads is None else out_grads
    d_loglik, d_kl = heads.reconstruction_loss_backward(elbo, kl_weight)
    d_x_vae = heads.vae_backward(
        cfg.gamma1 * d_loglik, cfg.gamma1 * d_kl, caches["vae"],
        params["vae"], grads["vae"],
    )
    d_forecasts = (1.0 - cfg.gamma1) * heads.prediction_loss_backward(
        forecasts, next_values
    )
    d_x_pred, d_v_pred = heads.predict_next_backward(
        d_forecasts, caches["pred"], params["pred"], grads["pred"]
    )
    d_x_feat = d_x_vae + d_x_pred
    d_timewise = temporal.temporal_backward(
        d_x_feat, caches["temporal"], params["temporal"], cfg, grads["temporal"]
    )
    d_v = mgat.mgat_backward(
        None, d_timewise, caches["mgat"], params["mgat"], grads["mgat"]
    )
    grads["V"] += d_v + d_v_pred
    return loss, l_rec, l_pred, grads
