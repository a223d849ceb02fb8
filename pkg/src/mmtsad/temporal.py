"""Temporal convolution stack over the time-resolved features.

Each layer applies a 1-D convolution along the time axis, per node, with
weights shared across nodes: out = ReLU(kernel * ReLU(in)). Zero padding
keeps the time length fixed, so layers stack freely. A final pooling step
collapses the time axis into one feature vector per node.
"""

from __future__ import annotations

import numpy as np

from .config import DetectorConfig

__all__ = [
    "init_temporal_params",
    "temporal_conv",
    "temporal_conv_backward",
    "temporal_forward",
    "temporal_backward",
]


def init_temporal_params(
    cfg: DetectorConfig, rng: np.random.Generator, dtype
) -> dict[str, np.ndarray]:
    if cfg.conv_kernel > cfg.window:
        raise ValueError("conv kernel wider than the window")
    params: dict[str, np.ndarray] = {}
    c_in = cfg.time_channels
    for layer in range(cfg.conv_layers):
        c_out = cfg.conv_channels
        fan = cfg.conv_kernel * c_in
        lim = np.sqrt(6.0 / (fan + c_out))
        params[f"l{layer}.Phi"] = rng.uniform(
            -lim, lim, size=(cfg.conv_kernel, c_in, c_out)
        ).astype(dtype)
        c_in = c_out
    return params


def _pad_time(x: np.ndarray, left: int, right: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (left, right), (0, 0)))


def _band_indices(phi: int, c_in: int, c_out: int, w: int, w_pad: int) -> np.ndarray:
    """Flat positions of each kernel tap inside the unrolled band matrix.

    The band matrix maps a padded, channel-interleaved time axis to the
    output one: band[(tau + k) * c_in + ci, tau * c_out + co] holds
    kernel[k, ci, co] for every output position tau. Shape of the result is
    (phi, c_in, c_out, w).
    """
    k = np.arange(phi)[:, None, None, None]
    ci = np.arange(c_in)[None, :, None, None]
    co = np.arange(c_out)[None, None, :, None]
    tau = np.arange(w)[None, None, None, :]
    rows = (tau + k) * c_in + ci
    cols = tau * c_out + co
    return rows * (w * c_out) + cols


_BAND_CACHE: dict[tuple[int, int, int, int, int], np.ndarray] = {}


def _band_matrix(kernel: np.ndarray, w: int, w_pad: int) -> tuple[np.ndarray, np.ndarray]:
    phi, c_in, c_out = kernel.shape
    key = (phi, c_in, c_out, w, w_pad)
    idx = _BAND_CACHE.get(key)
    if idx is None:
        idx = _band_indices(phi, c_in, c_out, w, w_pad)
        _BAND_CACHE[key] = idx
    band = np.zeros(w_pad * c_in * w * c_out, dtype=kernel.dtype)
    band[idx.reshape(phi * c_in * c_out, w)] = kernel.reshape(-1, 1)
    return band.reshape(w_pad * c_in, w * c_out), idx


def temporal_conv(
    t_in: np.ndarray, kernel: np.ndarray
) -> tuple[np.ndarray, dict]:
    """One double-ReLU convolution layer: ReLU(kernel * ReLU(t_in)).

    `t_in` is (B, N, w, c_in); `kernel` is (phi, c_in, c_out). Zero ("same")
    padding preserves the time length. The convolution runs as a single
    GEMM against a banded matrix built from the kernel.
    """
    phi, c_in, c_out = kernel.shape
    b, n, w, _ = t_in.shape
    if phi > w:
        raise ValueError(f"kernel width {phi} exceeds time length {w}")
    left = (phi - 1) // 2
    zp = _pad_time(np.maximum(t_in, 0.0), left, phi - 1 - left)
    w_pad = zp.shape[2]
    band, idx = _band_matrix(kernel, w, w_pad)
    zp_rows = zp.reshape(b * n, w_pad * c_in)
    pre = (zp_rows @ band).reshape(b, n, w, c_out)
    out = np.maximum(pre, 0.0)
    cache = {"t_in": t_in, "zp_rows": zp_rows, "mask_out": pre > 0,
             "left": left, "idx": idx, "w_pad": w_pad, "band": band}
    return out, cache


def temporal_conv_backward(
    d_out: np.ndarray, cache: dict, kernel: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (d_t_in, d_kernel)."""
    phi, c_in, c_out = kernel.shape
    left, w_pad = cache["left"], cache["w_pad"]
    b, n, w, _ = d_out.shape
    d_pre = (d_out * cache["mask_out"]).reshape(b * n, w * c_out)
    d_band = cache["zp_rows"].T @ d_pre
    d_kernel = d_band.reshape(-1)[
        cache["idx"].reshape(phi * c_in * c_out, w)
    ].sum(axis=1).reshape(phi, c_in, c_out)
    d_zp = (d_pre @ cache["band"].T).reshape(b, n, w_pad, c_in)
    d_t_in = d_zp[:, :, left : left + w, :] * (cache["t_in"] > 0)
    return d_t_in, d_kernel


def temporal_forward(
    timewise: np.ndarray, params: dict[str, np.ndarray], cfg: DetectorConfig
) -> tuple[np.ndarray, dict]:
    """Convolve along time, then pool the time axis away.

    Returns the per-node feature matrix (B, N, c_out) handed to the heads.
    With the temporal ablation active the conv stack is skipped and the raw
    time-resolved features are pooled directly.
    """
    caches = []
    x = timewise
    if not cfg.ablation.disable_temporal:
        for layer in range(cfg.conv_layers):
            x, cache = temporal_conv(x, params[f"l{layer}.Phi"])
            caches.append(cache)
    if cfg.pool == "mean":
        pooled = x.mean(axis=2)
        pool_cache = {"mode": "mean", "w": x.shape[2]}
    else:
        idx = x.argmax(axis=2)
        pooled = np.take_along_axis(x, idx[:, :, None, :], axis=2)[:, :, 0, :]
        pool_cache = {"mode": "max", "idx": idx, "shape": x.shape}
    return pooled, {"convs": caches, "pool": pool_cache}


def temporal_backward(
    d_pooled: np.ndarray, caches: dict, params: dict[str, np.ndarray],
    cfg: DetectorConfig, grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Returns the gradient wrt the time-resolved input features."""
    pool = caches["pool"]
    if pool["mode"] == "mean":
        w = pool["w"]
        d_x = np.repeat(d_pooled[:, :, None, :] / w, w, axis=2)
    else:
        d_x = np.zeros(pool["shape"], dtype=d_pooled.dtype)
        np.put_along_axis(d_x, pool["idx"][:, :, None, :], d_pooled[:, :, None, :], axis=2)
    if not cfg.ablation.disable_temporal:
        for layer in reversed(range(cfg.conv_layers)):
            d_x, d_kernel = temporal_conv_backward(
                d_x, caches["convs"][layer], params[f"l{layer}.Phi"]
            )
            grads[f"l{layer}.Phi"] += d_kernel
    return d_x
