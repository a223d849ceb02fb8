"""Joint heads: variational reconstruction and next-step prediction.

The reconstruction head encodes the pooled node features into a Gaussian
latent, decodes Monte-Carlo latent samples into a per-series Gaussian over
the window's last observations, and reports per-series reconstruction
probabilities in (0, 1] via the normalized Gaussian kernel
exp(-(x - mu)^2 / (2 sigma^2)). The prediction head is a weight-shared MLP
that maps each node's features (with its embedding appended) to a scalar
one-step forecast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import DetectorConfig
from .errors import NumericError
from .mgat import glorot

__all__ = [
    "ElboTerms",
    "init_vae_params",
    "init_predictor_params",
    "vae_forward",
    "vae_backward",
    "reconstruction_loss",
    "reconstruction_loss_backward",
    "predict_next",
    "predict_next_backward",
    "prediction_loss",
    "prediction_loss_backward",
]

LOG_2PI = float(np.log(2.0 * np.pi))
LOGVAR_MIN, LOGVAR_MAX = -6.0, 2.0  # decoder log-variance clamp


@dataclass
class ElboTerms:
    """Per-window Gaussian log-likelihood and KL divergence to the prior."""

    loglik: np.ndarray   # (B,)
    kl: np.ndarray       # (B,)


def init_vae_params(
    cfg: DetectorConfig, n_series: int, rng: np.random.Generator, dtype
) -> dict[str, np.ndarray]:
    flat = n_series * cfg.feature_channels
    eh, dh, z = cfg.enc_hidden, cfg.dec_hidden, cfg.latent_dim
    return {
        "enc.W1": glorot(rng, (flat, eh), dtype),
        "enc.b1": np.zeros(eh, dtype=dtype),
        "enc.Wmu": glorot(rng, (eh, z), dtype),
        "enc.bmu": np.zeros(z, dtype=dtype),
        "enc.Wlv": glorot(rng, (eh, z), dtype),
        "enc.blv": np.zeros(z, dtype=dtype),
        "dec.W1": glorot(rng, (z, dh), dtype),
        "dec.b1": np.zeros(dh, dtype=dtype),
        "dec.Wmu": glorot(rng, (dh, n_series), dtype),
        "dec.bmu": np.zeros(n_series, dtype=dtype),
        "dec.Wlv": glorot(rng, (dh, n_series), dtype),
        "dec.blv": np.zeros(n_series, dtype=dtype),
    }


def init_predictor_params(
    cfg: DetectorConfig, rng: np.random.Generator, dtype
) -> dict[str, np.ndarray]:
    width = cfg.feature_channels + cfg.embed_dim
    ph = cfg.pred_hidden
    return {
        "W1": glorot(rng, (width, ph), dtype),
        "b1": np.zeros(ph, dtype=dtype),
        "W2": glorot(rng, (ph, ph), dtype),
        "b2": np.zeros(ph, dtype=dtype),
        "W3": glorot(rng, (ph, 1), dtype),
        "b3": np.zeros(1, dtype=dtype),
    }


# ---------------------------------------------------------------------------
# Reconstruction head
# ---------------------------------------------------------------------------


def vae_forward(
    x_feat: np.ndarray,
    target: np.ndarray,
    params: dict[str, np.ndarray],
    eps: np.ndarray,
) -> tuple[np.ndarray, ElboTerms, dict]:
    """Encode, sample, decode; returns (recon probabilities, ELBO terms, cache).

    `x_feat` is (B, N, C); `target` is the (B, N) observation the decoder
    must explain; `eps` is pre-drawn standard normal noise of shape
    (samples, B, latent_dim) so the whole computation is a pure function.
    """
    b, n, _ = x_feat.shape
    flat = x_feat.reshape(b, -1)
    h1_pre = flat @ params["enc.W1"] + params["enc.b1"]
    h1 = np.maximum(h1_pre, 0.0)
    mu_z = h1 @ params["enc.Wmu"] + params["enc.bmu"]
    lv_z = h1 @ params["enc.Wlv"] + params["enc.blv"]
    if not (np.isfinite(mu_z).all() and np.isfinite(lv_z).all()):
        raise NumericError("encoder produced non-finite latent statistics")
    std_z = np.exp(0.5 * lv_z)

    n_samples = eps.shape[0]
    p = np.zeros((b, n), dtype=x_feat.dtype)
    loglik = np.zeros(b, dtype=x_feat.dtype)
    sample_caches = []
    for s in range(n_samples):
        z = mu_z + std_z * eps[s]
        hd_pre = z @ params["dec.W1"] + params["dec.b1"]
        hd = np.maximum(hd_pre, 0.0)
        mu_x = hd @ params["dec.Wmu"] + params["dec.bmu"]
        lv_raw = hd @ params["dec.Wlv"] + params["dec.blv"]
        lv_x = np.clip(lv_raw, LOGVAR_MIN, LOGVAR_MAX)
        inv_var = np.exp(-lv_x)
        sq = (target - mu_x) ** 2
        p += np.exp(-0.5 * sq * inv_var)
        loglik += -0.5 * (LOG_2PI + lv_x + sq * inv_var).sum(axis=1)
        sample_caches.append(
            {"z": z, "hd_pre": hd_pre, "hd": hd, "mu_x": mu_x,
             "lv_raw": lv_raw, "lv_x": lv_x, "inv_var": inv_var, "sq": sq}
        )
    p /= n_samples
    # the kernel is strictly positive; keep it that way under underflow
    np.maximum(p, np.finfo(p.dtype).tiny, out=p)
    loglik /= n_samples
    kl = 0.5 * (np.exp(lv_z) + mu_z**2 - 1.0 - lv_z).sum(axis=1)
    cache = {
        "flat": flat, "h1_pre": h1_pre, "h1": h1, "mu_z": mu_z, "lv_z": lv_z,
        "std_z": std_z, "eps": eps, "target": target, "samples": sample_caches,
        "x_shape": x_feat.shape,
    }
    return p, ElboTerms(loglik=loglik, kl=kl), cache


def vae_backward(
    d_loglik: np.ndarray,
    d_kl: np.ndarray,
    cache: dict,
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> np.ndarray:
    """Backprop given upstream gradients on the per-window ELBO terms.

    Returns the gradient wrt x_feat. The reconstruction probabilities are
    score outputs, not part of the loss, so no gradient flows through them.
    """
    mu_z, lv_z, std_z = cache["mu_z"], cache["lv_z"], cache["std_z"]
    target, eps = cache["target"], cache["eps"]
    n_samples = eps.shape[0]
    d_mu_z = d_kl[:, None] * mu_z
    d_lv_z = d_kl[:, None] * 0.5 * (np.exp(lv_z) - 1.0)

    per_sample = (d_loglik / n_samples)[:, None]
    for s, sc in enumerate(cache["samples"]):
        d_mu_x = per_sample * (target - sc["mu_x"]) * sc["inv_var"]
        d_lv_x = per_sample * (-0.5) * (1.0 - sc["sq"] * sc["inv_var"])
        d_lv_raw = d_lv_x * (
            (sc["lv_raw"] > LOGVAR_MIN) & (sc["lv_raw"] < LOGVAR_MAX)
        )
        d_hd = d_mu_x @ params["dec.Wmu"].T + d_lv_raw @ params["dec.Wlv"].T
        grads["dec.Wmu"] += sc["hd"].T @ d_mu_x
        grads["dec.bmu"] += d_mu_x.sum(axis=0)
        grads["dec.Wlv"] += sc["hd"].T @ d_lv_raw
        grads["dec.blv"] += d_lv_raw.sum(axis=0)
        d_hd_pre = d_hd * (sc["hd_pre"] > 0)
        grads["dec.W1"] += sc["z"].T @ d_hd_pre
        grads["dec.b1"] += d_hd_pre.sum(axis=0)
        d_z = d_hd_pre @ params["dec.W1"].T
        d_mu_z += d_z
        d_lv_z += d_z * eps[s] * 0.5 * std_z

    d_h1 = d_mu_z @ params["enc.Wmu"].T + d_lv_z @ params["enc.Wlv"].T
    grads["enc.Wmu"] += cache["h1"].T @ d_mu_z
    grads["enc.bmu"] += d_mu_z.sum(axis=0)
    grads["enc.Wlv"] += cache["h1"].T @ d_lv_z
    grads["enc.blv"] += d_lv_z.sum(axis=0)
    d_h1_pre = d_h1 * (cache["h1_pre"] > 0)
    grads["enc.W1"] += cache["flat"].T @ d_h1_pre
    grads["enc.b1"] += d_h1_pre.sum(axis=0)
    d_flat = d_h1_pre @ params["enc.W1"].T
    return d_flat.reshape(cache["x_shape"])


def reconstruction_loss(terms: ElboTerms, kl_weight: float = 1.0) -> float:
    """Negative evidence lower bound, averaged over the batch.

    The optional KL weight supports warm-up annealing; at 1.0 this is the
    plain negative ELBO.
    """
    return float(np.mean(-terms.loglik + kl_weight * terms.kl))


def reconstruction_loss_backward(
    terms: ElboTerms, kl_weight: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of reconstruction_loss wrt (loglik, kl)."""
    b = terms.loglik.shape[0]
    d_loglik = np.full(b, -1.0 / b, dtype=terms.loglik.dtype)
    d_kl = np.full(b, kl_weight / b, dtype=terms.kl.dtype)
    return d_loglik, d_kl


# ---------------------------------------------------------------------------
# Prediction head
# ---------------------------------------------------------------------------


def predict_next(
    x_feat: np.ndarray, v: np.ndarray, params: dict[str, np.ndarray]
) -> tuple[np.ndarray, dict]:
    """One-step forecast per series from its features and embedding.

    Weights are shared across nodes; output is (B, N).
    """
    b, n, c = x_feat.shape
    inp = np.concatenate(
        [x_feat, np.broadcast_to(v, (b, n, v.shape[1])).astype(x_feat.dtype)], axis=2
    ).reshape(b * n, -1)
    a1_pre = inp @ params["W1"] + params["b1"]
    a1 = np.maximum(a1_pre, 0.0)
    a2_pre = a1 @ params["W2"] + params["b2"]
    a2 = np.maximum(a2_pre, 0.0)
    out = (a2 @ params["W3"] + params["b3"]).reshape(b, n)
    cache = {"inp": inp, "a1_pre": a1_pre, "a1": a1, "a2_pre": a2_pre, "a2": a2,
             "shape": (b, n, c)}
    return out, cache


def predict_next_backward(
    d_out: np.ndarray, cache: dict, params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (d_x_feat, d_embeddings)."""
    b, n, c = cache["shape"]
    d_o = d_out.reshape(b * n, 1)
    grads["W3"] += cache["a2"].T @ d_o
    grads["b3"] += d_o.sum(axis=0)
    d_a2 = (d_o @ params["W3"].T) * (cache["a2_pre"] > 0)
    grads["W2"] += cache["a1"].T @ d_a2
    grads["b2"] += d_a2.sum(axis=0)
    d_a1 = (d_a2 @ params["W2"].T) * (cache["a1_pre"] > 0)
    grads["W1"] += cache["inp"].T @ d_a1
    grads["b1"] += d_a1.sum(axis=0)
    d_inp = (d_a1 @ params["W1"].T).reshape(b, n, -1)
    return d_inp[:, :, :c], d_inp[:, :, c:].sum(axis=0)


def prediction_loss(forecasts: np.ndarray, targets: np.ndarray) -> float:
    """Mean over windows of the root-sum-square forecast error across series."""
    if forecasts.shape != targets.shape:
        raise ValueError("forecasts and targets must align")
    rss = np.sqrt(((targets - forecasts) ** 2).sum(axis=1))
    return float(rss.mean())


def prediction_loss_backward(
    forecasts: np.ndarray, targets: np.ndarray
) -> np.ndarray:
    """Gradient of prediction_loss wrt the forecasts."""
    err = forecasts - targets
    rss = np.sqrt((err**2).sum(axis=1, keepdims=True))
    b = forecasts.shape[0]
    scale = np.divide(1.0, rss * b, out=np.zeros_like(rss), where=rss > 0)
    return err * scale
