"""Multimodal graph attention layer.

Each layer runs three attention paths over the series graph and fuses them:

* multi-head scaled dot-product attention over the TopK graph,
* relational attention over same-modality neighbors,
* relational attention over cross-modality neighbors.

Attention weights are computed from time-collapsed summary features (and,
for the relational paths, from the series embeddings alone). The resulting
aggregation weights are applied both to the summary features and, slice by
slice, to a parallel time-resolved tensor so that the temporal stage
downstream still sees a genuine time axis.

All forward functions return a cache consumed by the matching backward
function; gradients are accumulated into a flat name -> array dict.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DetectorConfig
from .graph import GraphTopology

__all__ = [
    "LayerFeatures",
    "init_mgat_params",
    "initial_features",
    "multi_head_attention",
    "relational_attention",
    "fuse",
    "mgat_forward",
    "mgat_backward",
]


@dataclass
class LayerFeatures:
    """Features carried between layers: pooled summary plus time-resolved."""

    summary: np.ndarray    # (B, N, D)
    timewise: np.ndarray   # (B, N, w, c)


def glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def init_mgat_params(
    cfg: DetectorConfig, rng: np.random.Generator, dtype
) -> dict[str, np.ndarray]:
    """Allocate every weight of the attention stack."""
    d, w, c = cfg.embed_dim, cfg.window, cfg.time_channels
    big_d = cfg.summary_width
    gh = cfg.score_hidden
    fuse_width = 1 if cfg.ablation.disable_modal else 3
    p: dict[str, np.ndarray] = {
        "W_in": glorot(rng, (w, d), dtype),
        "lift_w": glorot(rng, (1, c), dtype)[0],
        "lift_b": np.zeros(c, dtype=dtype),
    }
    for layer in range(cfg.gat_layers):
        pre = f"l{layer}."
        p[pre + "Wq"] = glorot(rng, (big_d, big_d), dtype)
        p[pre + "Wk"] = glorot(rng, (big_d, big_d), dtype)
        p[pre + "Watt"] = glorot(rng, (big_d, big_d), dtype)
        p[pre + "Watt_t"] = glorot(rng, (c, c), dtype)
        if not cfg.ablation.disable_modal:
            for rel in ("intra", "inter"):
                p[pre + rel + ".Wg1"] = glorot(rng, (2 * d, gh), dtype)
                p[pre + rel + ".bg1"] = np.zeros(gh, dtype=dtype)
                p[pre + rel + ".Wg2"] = glorot(rng, (gh, 1), dtype)
                p[pre + rel + ".Wrel"] = glorot(rng, (big_d, big_d), dtype)
                p[pre + rel + ".Wrel_t"] = glorot(rng, (c, c), dtype)
        p[pre + "Wout"] = glorot(rng, (fuse_width * big_d, big_d), dtype)
        p[pre + "bout"] = np.zeros(big_d, dtype=dtype)
        p[pre + "Wout_t"] = glorot(rng, (fuse_width * c, c), dtype)
        p[pre + "bout_t"] = np.zeros(c, dtype=dtype)
    return p


# ---------------------------------------------------------------------------
# Small helpers
# ---------------------------------------------------------------------------


def masked_softmax_rows(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax over masked entries; empty rows come back all-zero.

    `scores` has shape (..., N); `mask` is an (N, N)-style bool broadcastable
    to it. Masked-out entries get weight 0.
    """
    neg = np.where(mask, scores, -np.inf)
    rowmax = neg.max(axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    ex = np.exp(neg - rowmax, where=mask, out=np.zeros_like(scores))
    denom = ex.sum(axis=-1, keepdims=True)
    return np.divide(ex, denom, out=np.zeros_like(ex), where=denom > 0)


def softmax_rows_backward(weights: np.ndarray, d_weights: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of a row softmax; zero rows stay zero."""
    inner = (d_weights * weights).sum(axis=-1, keepdims=True)
    return weights * (d_weights - inner)


def agg_nodes(weights: np.ndarray, feats: np.ndarray) -> np.ndarray:
    """Weighted neighbor sum, out[b, i] = sum_j weights[i, j] feats[b, j].

    `weights` is (N, N); `feats` is (B, N, ...). One GEMM via tensordot.
    """
    out = np.tensordot(weights, feats, axes=(1, 1))      # (N, B, ...)
    return np.moveaxis(out, 0, 1)


def agg_nodes_backward(
    weights: np.ndarray, feats: np.ndarray, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of agg_nodes wrt (weights, feats)."""
    b = feats.shape[0]
    d_w = np.tensordot(
        d_out.reshape(b, d_out.shape[1], -1),
        feats.reshape(b, feats.shape[1], -1),
        axes=([0, 2], [0, 2]),
    )
    d_feats = np.moveaxis(np.tensordot(weights, d_out, axes=(0, 1)), 0, 1)
    return d_w, d_feats


def _rows(x: np.ndarray) -> np.ndarray:
    """Collapse all leading axes so matmuls hit BLAS as one big GEMM."""
    return x.reshape(-1, x.shape[-1])


# ---------------------------------------------------------------------------
# Initial features
# ---------------------------------------------------------------------------


def initial_features(
    window: np.ndarray, v: np.ndarray, params: dict[str, np.ndarray]
) -> tuple[LayerFeatures, dict]:
    """Lift a raw window batch into layer-0 features.

    summary = [window @ W_in || embedding] of width 2d; timewise lifts each
    scalar reading through a shared linear map into c channels.
    """
    w_in, lift_w, lift_b = params["W_in"], params["lift_w"], params["lift_b"]
    if window.ndim != 3:
        raise ValueError("window batch must be (B, N, w)")
    b, n, w = window.shape
    if w != w_in.shape[0]:
        raise ValueError(f"window length {w} does not match W_in rows {w_in.shape[0]}")
    if v.shape[0] != n:
        raise ValueError("embedding rows must match series count")
    proj = (_rows(window) @ w_in).reshape(b, n, -1)
    summary = np.concatenate(
        [proj, np.broadcast_to(v, (b, n, v.shape[1]))], axis=2
    )
    timewise = window[..., None] * lift_w + lift_b
    cache = {"window": window, "d": v.shape[1]}
    return LayerFeatures(summary=summary, timewise=timewise), cache


def initial_features_backward(
    d_summary: np.ndarray | None, d_timewise: np.ndarray, cache: dict,
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Returns the embedding gradient contribution."""
    window, d = cache["window"], cache["d"]
    grads["lift_w"] += (window[..., None] * d_timewise).sum(axis=(0, 1, 2))
    grads["lift_b"] += d_timewise.sum(axis=(0, 1, 2))
    if d_summary is None:
        return np.zeros((window.shape[1], d), dtype=window.dtype)
    grads["W_in"] += _rows(window).T @ _rows(d_summary[..., :d])
    return d_summary[..., d:].sum(axis=0)


# ---------------------------------------------------------------------------
# Multi-head attention over the TopK graph
# ---------------------------------------------------------------------------


def multi_head_attention(
    feat: LayerFeatures,
    adjacency: np.ndarray,
    params: dict[str, np.ndarray],
    layer: int,
    heads: int,
    uniform: bool = False,
    with_summary: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, dict]:
    """Scaled dot-product attention over neighbors, per head.

    Scores come from the summary features; each head's weights aggregate the
    summary and every time slice alike. With `uniform` set the scores are
    discarded and neighbors get equal weight (ablation path). The summary
    output feeds only the next layer's scores, so the last layer of a stack
    can skip it (`with_summary=False`).

    Returns (h_att, t_att, cache) of shapes (B, N, D) and (B, N, w, c).
    """
    hs, ht = feat.summary, feat.timewise
    b, n, big_d = hs.shape
    c = ht.shape[-1]
    dh, ch = big_d // heads, c // heads
    pre = f"l{layer}."
    watt, watt_t = params[pre + "Watt"], params[pre + "Watt_t"]

    if uniform:
        deg = adjacency.sum(axis=1, keepdims=True)
        alpha_base = (adjacency / deg).astype(hs.dtype)
        alphas = [np.broadcast_to(alpha_base, (b, n, n))] * heads
        q = k = None
    else:
        q = (_rows(hs) @ params[pre + "Wq"]).reshape(b, n, big_d)
        k = (_rows(hs) @ params[pre + "Wk"]).reshape(b, n, big_d)
        alphas = []
        for s in range(heads):
            qs = q[..., s * dh : (s + 1) * dh]
            ks = k[..., s * dh : (s + 1) * dh]
            scores = (qs @ ks.transpose(0, 2, 1)) / float(np.sqrt(dh))
            alphas.append(masked_softmax_rows(scores, adjacency))

    h_att = np.empty_like(hs) if with_summary else None
    t_att = np.empty_like(ht)
    h_aggs, t_aggs = [], []
    ht_flat = ht.reshape(b, n, -1)
    for s in range(heads):
        t_agg = (alphas[s] @ ht_flat).reshape(ht.shape)          # (B, N, w, c)
        t_att[..., s * ch : (s + 1) * ch] = (
            _rows(t_agg) @ watt_t[:, s * ch : (s + 1) * ch]
        ).reshape(b, n, -1, ch)
        t_aggs.append(t_agg)
        if with_summary:
            h_agg = alphas[s] @ hs                               # (B, N, D)
            h_att[..., s * dh : (s + 1) * dh] = (
                _rows(h_agg) @ watt[:, s * dh : (s + 1) * dh]
            ).reshape(b, n, dh)
            h_aggs.append(h_agg)
    cache = {
        "hs": hs, "ht": ht, "alphas": alphas, "h_aggs": h_aggs, "t_aggs": t_aggs,
        "q": q, "k": k, "heads": heads, "uniform": uniform, "layer": layer,
        "adjacency": adjacency, "with_summary": with_summary,
    }
    return h_att, t_att, cache


def multi_head_attention_backward(
    d_h_att: np.ndarray | None, d_t_att: np.ndarray, cache: dict,
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Returns gradients wrt the layer's input (summary, timewise)."""
    hs, ht = cache["hs"], cache["ht"]
    heads, layer = cache["heads"], cache["layer"]
    b, n, big_d = hs.shape
    c = ht.shape[-1]
    dh, ch = big_d // heads, c // heads
    pre = f"l{layer}."
    watt, watt_t = params[pre + "Watt"], params[pre + "Watt_t"]

    d_hs = np.zeros_like(hs)
    d_ht = np.zeros_like(ht)
    ht_flat = ht.reshape(b, n, -1)
    d_q = np.zeros_like(hs) if not cache["uniform"] else None
    d_k = np.zeros_like(hs) if not cache["uniform"] else None

    for s in range(heads):
        alpha = cache["alphas"][s]
        t_agg = cache["t_aggs"][s]
        d_tout = d_t_att[..., s * ch : (s + 1) * ch]
        grads[pre + "Watt_t"][:, s * ch : (s + 1) * ch] += _rows(t_agg).T @ _rows(d_tout)
        d_t_agg = (_rows(d_tout) @ watt_t[:, s * ch : (s + 1) * ch].T).reshape(ht.shape)
        d_t_agg_flat = d_t_agg.reshape(b, n, -1)

        d_alpha = d_t_agg_flat @ ht_flat.transpose(0, 2, 1)
        d_ht += (alpha.transpose(0, 2, 1) @ d_t_agg_flat).reshape(ht.shape)

        if d_h_att is not None and cache["with_summary"]:
            h_agg = cache["h_aggs"][s]
            d_out = d_h_att[..., s * dh : (s + 1) * dh]
            grads[pre + "Watt"][:, s * dh : (s + 1) * dh] += (
                _rows(h_agg).T @ _rows(d_out)
            )
            d_h_agg = (
                _rows(d_out) @ watt[:, s * dh : (s + 1) * dh].T
            ).reshape(b, n, big_d)
            d_alpha += d_h_agg @ hs.transpose(0, 2, 1)
            d_hs += alpha.transpose(0, 2, 1) @ d_h_agg

        if not cache["uniform"]:
            qs = cache["q"][..., s * dh : (s + 1) * dh]
            ks = cache["k"][..., s * dh : (s + 1) * dh]
            d_scores = softmax_rows_backward(alpha, d_alpha) / float(np.sqrt(dh))
            d_q[..., s * dh : (s + 1) * dh] = d_scores @ ks
            d_k[..., s * dh : (s + 1) * dh] = d_scores.transpose(0, 2, 1) @ qs

    if not cache["uniform"]:
        grads[pre + "Wq"] += _rows(hs).T @ _rows(d_q)
        grads[pre + "Wk"] += _rows(hs).T @ _rows(d_k)
        d_hs += (_rows(d_q) @ params[pre + "Wq"].T).reshape(hs.shape)
        d_hs += (_rows(d_k) @ params[pre + "Wk"].T).reshape(hs.shape)
    return d_hs, d_ht


# ---------------------------------------------------------------------------
# Relational (intra-/inter-modal) attention
# ---------------------------------------------------------------------------


def relational_scores(
    v: np.ndarray, adjacency: np.ndarray, params: dict[str, np.ndarray], prefix: str,
    dtype,
) -> tuple[np.ndarray, dict]:
    """Per-edge scores from embeddings: sigmoid(ReLU([v_i||v_j] W1 + b1) W2),
    softmax-normalized over each node's relational neighbor set."""
    n, d = v.shape
    vv = v.astype(dtype, copy=False)
    pair = np.concatenate(
        [
            np.broadcast_to(vv[:, None, :], (n, n, d)),
            np.broadcast_to(vv[None, :, :], (n, n, d)),
        ],
        axis=2,
    ).reshape(n * n, 2 * d)
    pre1 = pair @ params[prefix + "Wg1"] + params[prefix + "bg1"]
    u = np.maximum(pre1, 0.0)
    raw = (u @ params[prefix + "Wg2"]).reshape(n, n)
    g = 1.0 / (1.0 + np.exp(-raw))
    beta = masked_softmax_rows(g, adjacency)
    cache = {"pair": pair, "pre1": pre1, "u": u, "g": g, "beta": beta,
             "adjacency": adjacency, "prefix": prefix, "d": d}
    return beta, cache


def relational_scores_backward(
    d_beta: np.ndarray, cache: dict, params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backprop through the score MLP; returns the embedding gradient."""
    prefix, d = cache["prefix"], cache["d"]
    g, beta = cache["g"], cache["beta"]
    n = g.shape[0]
    d_g = softmax_rows_backward(beta, d_beta)
    d_raw = (d_g * g * (1.0 - g)).reshape(n * n, 1)
    grads[prefix + "Wg2"] += cache["u"].T @ d_raw
    d_u = d_raw @ params[prefix + "Wg2"].T
    d_pre1 = d_u * (cache["pre1"] > 0)
    grads[prefix + "Wg1"] += cache["pair"].T @ d_pre1
    grads[prefix + "bg1"] += d_pre1.sum(axis=0)
    d_pair = (d_pre1 @ params[prefix + "Wg1"].T).reshape(n, n, 2 * d)
    return d_pair[:, :, :d].sum(axis=1) + d_pair[:, :, d:].sum(axis=0)


def relational_attention(
    feat: LayerFeatures,
    v: np.ndarray,
    adjacency: np.ndarray,
    params: dict[str, np.ndarray],
    layer: int,
    relation: str,
    with_summary: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, dict]:
    """Aggregate neighbors of one relation with embedding-derived weights.

    Nodes whose relational neighbor set is empty contribute a zero vector.
    """
    hs, ht = feat.summary, feat.timewise
    prefix = f"l{layer}.{relation}."
    beta, score_cache = relational_scores(v, adjacency, params, prefix, hs.dtype)
    t_agg = agg_nodes(beta, ht)
    t_rel = (_rows(t_agg) @ params[prefix + "Wrel_t"]).reshape(ht.shape)
    h_agg = h_rel = None
    if with_summary:
        h_agg = agg_nodes(beta, hs)
        h_rel = (_rows(h_agg) @ params[prefix + "Wrel"]).reshape(hs.shape)
    cache = {"hs": hs, "ht": ht, "h_agg": h_agg, "t_agg": t_agg,
             "score": score_cache, "prefix": prefix}
    return h_rel, t_rel, cache


def relational_attention_backward(
    d_h_rel: np.ndarray | None, d_t_rel: np.ndarray, cache: dict,
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns gradients wrt (summary, timewise, embeddings)."""
    hs, ht = cache["hs"], cache["ht"]
    prefix = cache["prefix"]
    beta = cache["score"]["beta"]

    grads[prefix + "Wrel_t"] += _rows(cache["t_agg"]).T @ _rows(d_t_rel)
    d_t_agg = (_rows(d_t_rel) @ params[prefix + "Wrel_t"].T).reshape(ht.shape)
    d_beta_t, d_ht = agg_nodes_backward(beta, ht, d_t_agg)

    d_hs = np.zeros_like(hs)
    d_beta = d_beta_t
    if d_h_rel is not None and cache["h_agg"] is not None:
        grads[prefix + "Wrel"] += _rows(cache["h_agg"]).T @ _rows(d_h_rel)
        d_h_agg = (_rows(d_h_rel) @ params[prefix + "Wrel"].T).reshape(hs.shape)
        d_beta_s, d_hs = agg_nodes_backward(beta, hs, d_h_agg)
        d_beta = d_beta + d_beta_s
    d_v = relational_scores_backward(d_beta, cache["score"], params, grads)
    return d_hs, d_ht, d_v


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


def fuse(
    branches_s: list[np.ndarray] | None,
    branches_t: list[np.ndarray],
    params: dict[str, np.ndarray],
    layer: int,
) -> tuple[LayerFeatures, dict]:
    """Concatenate the attention branches and mix through a ReLU layer.

    `branches_s` may be None when the summary output is not needed (last
    layer of a stack); the summary of the returned features is then None.
    """
    pre = f"l{layer}."
    o_t = branches_t[0] if len(branches_t) == 1 else np.concatenate(branches_t, axis=-1)
    pre_t = _rows(o_t) @ params[pre + "Wout_t"] + params[pre + "bout_t"]
    timewise = np.maximum(pre_t, 0.0).reshape(
        o_t.shape[0], o_t.shape[1], o_t.shape[2], -1
    )
    cache = {"o_t": o_t, "mask_t": pre_t > 0, "layer": layer,
             "widths_t": [x.shape[-1] for x in branches_t],
             "o_s": None, "mask_s": None, "widths_s": None}
    summary = None
    if branches_s is not None:
        o_s = branches_s[0] if len(branches_s) == 1 else np.concatenate(branches_s, axis=-1)
        pre_s = _rows(o_s) @ params[pre + "Wout"] + params[pre + "bout"]
        summary = np.maximum(pre_s, 0.0).reshape(o_s.shape[0], o_s.shape[1], -1)
        cache["o_s"] = o_s
        cache["mask_s"] = pre_s > 0
        cache["widths_s"] = [x.shape[-1] for x in branches_s]
    return LayerFeatures(summary=summary, timewise=timewise), cache


def _split_last(d_o: np.ndarray, widths: list[int]) -> list[np.ndarray]:
    out, pos = [], 0
    for width in widths:
        out.append(d_o[..., pos : pos + width])
        pos += width
    return out


def fuse_backward(
    d_summary: np.ndarray | None, d_timewise: np.ndarray, cache: dict,
    params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
) -> tuple[list[np.ndarray] | None, list[np.ndarray]]:
    pre = f"l{cache['layer']}."
    d_pre_t = _rows(d_timewise) * cache["mask_t"]
    grads[pre + "Wout_t"] += _rows(cache["o_t"]).T @ d_pre_t
    grads[pre + "bout_t"] += d_pre_t.sum(axis=0)
    d_o_t = (d_pre_t @ params[pre + "Wout_t"].T).reshape(cache["o_t"].shape)
    out_t = _split_last(d_o_t, cache["widths_t"])
    out_s = None
    if d_summary is not None and cache["o_s"] is not None:
        d_pre_s = _rows(d_summary) * cache["mask_s"]
        grads[pre + "Wout"] += _rows(cache["o_s"]).T @ d_pre_s
        grads[pre + "bout"] += d_pre_s.sum(axis=0)
        d_o_s = (d_pre_s @ params[pre + "Wout"].T).reshape(cache["o_s"].shape)
        out_s = _split_last(d_o_s, cache["widths_s"])
    return out_s, out_t


# ---------------------------------------------------------------------------
# Full stack
# ---------------------------------------------------------------------------


def mgat_forward(
    window: np.ndarray,
    v: np.ndarray,
    topology: GraphTopology,
    params: dict[str, np.ndarray],
    cfg: DetectorConfig,
    final_summary: bool = True,
) -> tuple[LayerFeatures, dict]:
    """Run the attention stack over a window batch.

    With zero layers configured this is the identity on the initial
    features. `final_summary=False` skips the summary-path output of the
    last layer, which nothing downstream consumes.
    """
    feat, init_cache = initial_features(window, v.astype(window.dtype, copy=False), params)
    layer_caches = []
    for layer in range(cfg.gat_layers):
        last = layer == cfg.gat_layers - 1
        with_summary = final_summary or not last
        h_att, t_att, att_cache = multi_head_attention(
            feat, topology.A, params, layer, cfg.heads,
            uniform=cfg.ablation.disable_attention, with_summary=with_summary,
        )
        branches_s = [h_att] if with_summary else None
        branches_t = [t_att]
        rel_caches = {}
        if not cfg.ablation.disable_modal:
            for rel, adj in (("intra", topology.A_intra), ("inter", topology.A_inter)):
                h_rel, t_rel, rel_cache = relational_attention(
                    feat, v, adj, params, layer, rel, with_summary=with_summary
                )
                if with_summary:
                    branches_s.append(h_rel)
                branches_t.append(t_rel)
                rel_caches[rel] = rel_cache
        feat, fuse_cache = fuse(branches_s, branches_t, params, layer)
        layer_caches.append({"att": att_cache, "rel": rel_caches, "fuse": fuse_cache})
    return feat, {"init": init_cache, "layers": layer_caches}


def mgat_backward(
    d_summary: np.ndarray | None,
    d_timewise: np.ndarray,
    caches: dict,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backprop through the stack; returns the embedding gradient."""
    d_v_total: np.ndarray | None = None
    for layer_cache in reversed(caches["layers"]):
        branch_grads_s, branch_grads_t = fuse_backward(
            d_summary, d_timewise, layer_cache["fuse"], params, grads
        )
        none_s = branch_grads_s is None
        d_hs, d_ht = multi_head_attention_backward(
            None if none_s else branch_grads_s[0], branch_grads_t[0],
            layer_cache["att"], params, grads,
        )
        for idx, rel in enumerate(("intra", "inter")):
            if rel not in layer_cache["rel"]:
                continue
            dh, dt, dv = relational_attention_backward(
                None if none_s else branch_grads_s[idx + 1], branch_grads_t[idx + 1],
                layer_cache["rel"][rel], params, grads,
            )
            d_hs += dh
            d_ht += dt
            d_v_total = dv if d_v_total is None else d_v_total + dv
        d_summary, d_timewise = d_hs, d_ht
    d_v_init = initial_features_backward(d_summary, d_timewise, caches["init"], grads)
    return d_v_init if d_v_total is None else d_v_init + d_v_total
