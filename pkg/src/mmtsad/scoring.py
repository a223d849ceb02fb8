"""Anomaly scoring, extreme-value thresholding, and interpretation.

The per-sensor score at a timestamp blends the reconstruction probability
shortfall (1 - p) with the squared one-step forecast error, weighted by
gamma2 and normalized by (1 + gamma2). The aggregate score is the sum over
sensors. Thresholds come from a peaks-over-threshold fit of a generalized
Pareto distribution to validation-score excesses.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import network
from .data import TimeSeriesDataset, stack_windows, window_ends
from .errors import DataError
from .training import ModelState

__all__ = [
    "ScoreTrace",
    "per_sensor_scores",
    "score_series",
    "pot_threshold",
    "fit_gpd_tail",
    "detect",
    "interpret",
    "write_trace_csv",
    "read_trace_csv",
]


@dataclass(frozen=True)
class ScoreTrace:
    """Per-timestamp scoring output over one series matrix."""

    sensor_scores: np.ndarray   # (T, N) float64, zero in the warm-up region
    scores: np.ndarray          # (T,) aggregate = sum over sensors
    threshold: float
    detections: np.ndarray      # (T,) int8, 1 iff score > threshold
    names: tuple[str, ...]
    warmup: int                 # first `warmup` timestamps are never scored

    @property
    def n_timestamps(self) -> int:
        return self.scores.shape[0]


def align_series(ds: TimeSeriesDataset, state: ModelState) -> TimeSeriesDataset:
    """Reorder dataset series by name to the model's order; reject mismatches."""
    if ds.names == state.names:
        if ds.modality != state.modality:
            raise DataError("dataset modalities do not match the model")
        return ds
    if sorted(ds.names) != sorted(state.names):
        raise DataError(
            f"dataset series do not match the model "
            f"(expected {sorted(state.names)}, got {sorted(ds.names)})"
        )
    order = [ds.names.index(name) for name in state.names]
    reordered = TimeSeriesDataset(
        names=state.names,
        values=ds.values[order],
        modality=tuple(ds.modality[i] for i in order),
        labels=ds.labels,
        split=ds.split,
    )
    if reordered.modality != state.modality:
        raise DataError("dataset modalities do not match the model")
    return reordered


def per_sensor_scores(
    p: np.ndarray, x: np.ndarray, x_hat: np.ndarray, gamma2: float
) -> np.ndarray:
    """Blend reconstruction shortfall and squared forecast error per sensor.

    s_i = ((1 - p_i) + gamma2 * (x_i - x_hat_i)^2) / (1 + gamma2),
    evaluated componentwise; inputs live on the normalized scale.
    """
    p = np.asarray(p, dtype=np.float64)
    sq = (np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)) ** 2
    return ((1.0 - p) + gamma2 * sq) / (1.0 + gamma2)


def score_series(
    state: ModelState,
    ds: TimeSeriesDataset,
    threshold: float | None = None,
    batch_size: int = 256,
) -> ScoreTrace:
    """Score every timestamp of a normalized dataset with a trained model.

    The score at t combines the reconstruction of the window ending at t
    with the forecast made at t-1 for t, so both terms judge the same
    observation. The first `window` timestamps have no complete history and
    get score 0. Monte-Carlo reconstruction noise is drawn from a fixed
    stream, so scoring is deterministic.

    If `threshold` is omitted it is fitted with `pot_threshold` on the
    validation scores stored in the model state. Series may arrive in any
    order; they are aligned to the model by name.
    """
    ds = align_series(ds, state)
    cfg = state.config
    w = cfg.window
    n, t_total = ds.values.shape
    dtype = cfg.np_dtype()

    sensor = np.zeros((t_total, n), dtype=np.float64)
    if t_total > w:
        values = ds.values.astype(dtype)
        ends = window_ends(t_total, w, 1)
        p_at = np.full((t_total, n), np.nan)
        x_hat_at = np.full((t_total, n), np.nan)
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 0x5C0E]).generate_state(4)
        )
        for start in range(0, ends.size, batch_size):
            chosen = ends[start : start + batch_size]
            windows = stack_windows(values, chosen, w)
            eps = rng.standard_normal(
                (cfg.mc_samples_infer, chosen.size, cfg.latent_dim)
            ).astype(dtype)
            p, forecasts = network.forward_scores(
                state.params, cfg, state.topology, windows, eps
            )
            p_at[chosen] = p
            nxt = chosen + 1
            keep = nxt < t_total
            x_hat_at[nxt[keep]] = forecasts[keep]
        scored = np.arange(w, t_total)
        sensor[scored] = per_sensor_scores(
            p_at[scored], ds.values.T[scored], x_hat_at[scored], cfg.gamma2
        )

    scores = sensor.sum(axis=1)
    if threshold is None:
        if state.val_scores is None:
            raise ValueError(
                "model state carries no validation scores; pass a threshold"
            )
        threshold = pot_threshold(
            state.val_scores, q=cfg.pot_q, init_level=cfg.pot_init_level
        )
    detections = (scores > threshold).astype(np.int8)
    return ScoreTrace(
        sensor_scores=sensor,
        scores=scores,
        threshold=float(threshold),
        detections=detections,
        names=state.names,
        warmup=min(w, t_total),
    )


# ---------------------------------------------------------------------------
# Peaks-over-threshold
# ---------------------------------------------------------------------------


def _gpd_profile_loglik(theta: np.ndarray, excesses: np.ndarray) -> np.ndarray:
    """Profile log-likelihood of a generalized Pareto fit, one value per theta.

    For theta = xi/sigma != 0 the shape estimate is the mean of
    log(1 + theta * y); the scale follows as xi/theta.
    """
    n_u = excesses.size
    ll = np.full(theta.shape, -np.inf)
    for i, th in enumerate(theta):
        if th == 0.0:
            ll[i] = -n_u * (1.0 + np.log(excesses.mean()))
            continue
        one_plus = 1.0 + th * excesses
        if (one_plus <= 0.0).any():
            continue
        xi = np.log(one_plus).mean()
        if xi == 0.0 or xi / th <= 0.0:
            continue
        ll[i] = -n_u * (np.log(xi / th) + xi + 1.0)
    return ll


def fit_gpd_tail(excesses: np.ndarray, grid_size: int = 160,
                 refinements: int = 2) -> tuple[float, float]:
    """Maximum-likelihood GPD fit of positive excesses, grid-refined.

    Searches the one-parameter profile over theta = shape/scale on a grid
    spanning the admissible range (-1/max(y), +large), refining around the
    best point. Returns (shape, scale).
    """
    y = np.asarray(excesses, dtype=np.float64)
    y_max, y_mean = y.max(), y.mean()
    lo = -1.0 / y_max
    hi = 100.0 / y_mean
    grid = np.concatenate([
        np.linspace(lo * (1.0 - 1e-6), -1e-9, grid_size // 2, endpoint=True),
        [0.0],
        np.geomspace(1e-6 / y_mean, hi, grid_size // 2),
    ])
    for _ in range(refinements + 1):
        ll = _gpd_profile_loglik(grid, y)
        best = int(np.argmax(ll))
        left = grid[max(0, best - 1)]
        right = grid[min(grid.size - 1, best + 1)]
        if right <= left:
            break
        grid = np.linspace(left, right, grid_size)
    theta = float(grid[int(np.argmax(_gpd_profile_loglik(grid, y)))])
    if theta == 0.0:
        return 0.0, float(y_mean)
    xi = float(np.log(1.0 + theta * y).mean())
    return xi, xi / theta


def pot_threshold(
    val_scores: np.ndarray, q: float = 1e-3, init_level: float = 0.98
) -> float:
    """Detection threshold exceeded with probability q, from clean scores.

    Sets an initial level u at the `init_level` empirical quantile, fits a
    generalized Pareto distribution to the excesses above u by grid-refined
    maximum likelihood, and extrapolates the tail:

        z_q = u + (scale / shape) * ((q n / N_u)^(-shape) - 1),

    with the exponential form u + scale * ln(N_u / (q n)) as the shape -> 0
    limit. Degenerate fits (too few excesses, extreme shape) fall back to
    the empirical (1 - q) quantile; an all-constant input returns that
    constant plus an epsilon so nothing is flagged.
    """
    s = np.asarray(val_scores, dtype=np.float64)
    if s.size < 50:
        raise ValueError(f"need at least 50 validation scores, got {s.size}")
    if not 0.0 < q < init_level < 1.0:
        raise ValueError("require 0 < q < init_level < 1")
    if s.max() == s.min():
        c = float(s[0])
        return c + np.finfo(np.float64).eps * max(1.0, abs(c))

    u = float(np.quantile(s, init_level))
    excesses = s[s > u] - u
    n, n_u = s.size, excesses.size
    if n_u < 10 or q * n >= n_u:
        return float(np.quantile(s, 1.0 - q))
    xi, sigma = fit_gpd_tail(excesses)
    if not (np.isfinite(xi) and np.isfinite(sigma)) or not -0.95 < xi < 5.0:
        return float(np.quantile(s, 1.0 - q))
    r = q * n / n_u
    if abs(xi) < 1e-9:
        z = u + sigma * np.log(1.0 / r)
    else:
        z = u + (sigma / xi) * (r**-xi - 1.0)
    if not np.isfinite(z) or z < u:
        return float(np.quantile(s, 1.0 - q))
    return float(z)


def detect(trace: ScoreTrace, threshold: float) -> np.ndarray:
    """Flag timestamps whose aggregate score strictly exceeds the threshold."""
    return (trace.scores > threshold).astype(np.int8)


def with_threshold(trace: ScoreTrace, threshold: float) -> ScoreTrace:
    t = replace(trace, threshold=float(threshold))
    return replace(t, detections=detect(t, threshold))


# ---------------------------------------------------------------------------
# Interpretation
# ---------------------------------------------------------------------------


def interpret(
    trace: ScoreTrace, interval: tuple[int, int]
) -> list[tuple[str, float]]:
    """Rank sensors by mean score over [a, b] (inclusive); top-1 is the verdict.

    Ties keep the stable series order.
    """
    a, b = interval
    if not (0 <= a <= b < trace.n_timestamps):
        raise ValueError(
            f"interval [{a}, {b}] outside trace range [0, {trace.n_timestamps - 1}]"
        )
    means = trace.sensor_scores[a : b + 1].mean(axis=0)
    order = np.argsort(-means, kind="stable")
    return [(trace.names[i], float(means[i])) for i in order]


# ---------------------------------------------------------------------------
# Trace file format
# ---------------------------------------------------------------------------


def write_trace_csv(path: str | Path, trace: ScoreTrace, header_comment: str = "") -> None:
    """Write `t,score,detected,s_1,...,s_N` rows."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(f"# threshold={trace.threshold!r} warmup={trace.warmup}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "score", "detected"]
            + [f"s_{i + 1}" for i in range(len(trace.names))]
        )
        for t in range(trace.n_timestamps):
            writer.writerow(
                [t, repr(float(trace.scores[t])), int(trace.detections[t])]
                + [repr(float(x)) for x in trace.sensor_scores[t]]
            )


def read_trace_csv(path: str | Path, names: tuple[str, ...] | None = None) -> ScoreTrace:
    """Read a trace written by write_trace_csv."""
    threshold = np.nan
    warmup = 0
    rows = []
    with open(path, newline="") as fh:
        header = None
        for line in fh:
            if line.startswith("#"):
                for token in line[1:].split():
                    if token.startswith("threshold="):
                        threshold = float(token.split("=", 1)[1])
                    elif token.startswith("warmup="):
                        warmup = int(token.split("=", 1)[1])
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
                continue
            rows.append(cells)
    if header is None or len(header) < 4:
        raise DataError(f"{path}: not a score trace file")
    n = len(header) - 3
    t_total = len(rows)
    sensor = np.empty((t_total, n))
    scores = np.empty(t_total)
    detections = np.empty(t_total, dtype=np.int8)
    for k, cells in enumerate(rows):
        scores[k] = float(cells[1])
        detections[k] = int(cells[2])
        sensor[k] = [float(x) for x in cells[3:]]
    if names is None:
        names = tuple(header[3:])
    if len(names) != n:
        raise DataError(f"{path}: expected {n} sensor columns, got {len(names)} names")
    return ScoreTrace(
        sensor_scores=sensor, scores=scores, threshold=threshold,
        detections=detections, names=tuple(names), warmup=warmup,
    )
