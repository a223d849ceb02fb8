"""Datasets: ingestion, normalization, windowing, and synthetic generation.

A dataset is N named univariate series over T timestamps, each series tagged
with a modality id in 1..M. Values are stored as an (N, T) float64 matrix.
Timestamps are 0-based throughout.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "TimeSeriesDataset",
    "WindowBatch",
    "NormStats",
    "AnomalyEvent",
    "SynthSpec",
    "load_dataset",
    "read_data_csv",
    "read_labels_csv",
    "write_labels_csv",
    "write_dataset_csv",
    "normalize",
    "fit_norm_stats",
    "apply_norm",
    "denormalize",
    "make_windows",
    "window_count",
    "window_ends",
    "stack_windows",
    "synthesize",
    "synthesize_ex",
]

TEST_CLIP = (-1.0, 2.0)  # post-scaling range allowed outside the train envelope


@dataclass(frozen=True)
class TimeSeriesDataset:
    """N named series over T timestamps with per-series modality labels."""

    names: tuple[str, ...]
    values: np.ndarray                    # (N, T) float64
    modality: tuple[int, ...]             # per-series id in 1..M
    labels: np.ndarray | None = None      # (T,) 0/1, test split only
    split: str = "train"                  # "train" | "test"
    events: tuple["AnomalyEvent", ...] | None = None  # generator ground truth

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        n, t = values.shape
        if n < 1:
            raise DataError("dataset needs at least one series")
        if len(self.names) != n or len(set(self.names)) != n:
            raise DataError("series names must be unique and match the value rows")
        if len(self.modality) != n:
            raise DataError("modality list length must equal the number of series")
        mods = sorted(set(self.modality))
        m = len(mods)
        if m > n or mods != list(range(1, m + 1)):
            raise DataError(
                f"modality ids must cover 1..M with every id used, got {mods}"
            )
        if not np.isfinite(values).all():
            raise DataError("dataset values contain non-finite entries")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int8)
            if labels.shape != (t,):
                raise DataError(f"labels must have length {t}, got {labels.shape}")
            if not np.isin(labels, (0, 1)).all():
                raise DataError("labels must be 0/1")
            object.__setattr__(self, "labels", labels)
        if self.split not in ("train", "test"):
            raise DataError("split must be 'train' or 'test'")

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_timestamps(self) -> int:
        return self.values.shape[1]

    @property
    def n_modalities(self) -> int:
        return max(self.modality)

    def with_values(self, values: np.ndarray) -> "TimeSeriesDataset":
        return replace(self, values=values)

    def slice_time(self, start: int, stop: int) -> "TimeSeriesDataset":
        labels = None if self.labels is None else self.labels[start:stop]
        return replace(self, values=self.values[:, start:stop], labels=labels,
                       events=None)


@dataclass(frozen=True)
class WindowBatch:
    """One sliding-window slice and, when available, the following observation."""

    window: np.ndarray              # (N, w)
    next_value: np.ndarray | None   # (N,), absent for the final window
    t_end: int                      # 0-based index of the window's last column

    def __post_init__(self) -> None:
        if self.window.shape[1] < 2:
            raise DataError("window length must be >= 2")


@dataclass(frozen=True)
class AnomalyEvent:
    """Ground-truth record of one injected anomaly."""

    kind: str        # "spike" | "stuck" | "decorrelation"
    series: int      # perturbed series index
    start: int       # first labeled timestamp (0-based, in the test split)
    end: int         # last labeled timestamp, inclusive

    @property
    def length(self) -> int:
        return self.end - self.start + 1


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _read_csv_rows(path: str | Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Read a CSV, skipping '#' comment lines; return header and numbered rows."""
    header: list[str] | None = None
    rows: list[tuple[int, list[str]]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].startswith("#") and header is None):
                continue
            if row[0].startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in row]
            else:
                rows.append((lineno, row))
    if header is None:
        raise DataError(f"{path}: no header row found")
    return header, rows


def read_data_csv(data_path: str | Path) -> tuple[tuple[str, ...], np.ndarray]:
    """Parse a data CSV into (names, values as an (N, T) matrix).

    The file holds a header row of unique series names and one row per
    timestamp in chronological order. Non-numeric or missing cells are
    rejected with their location.
    """
    names, rows = _read_csv_rows(data_path)
    if len(set(names)) != len(names):
        raise DataError(f"{data_path}: duplicate series names in header")
    n = len(names)
    values = np.empty((len(rows), n), dtype=np.float64)
    for r, (lineno, row) in enumerate(rows):
        if len(row) != n:
            raise DataError(
                f"{data_path}: line {lineno} has {len(row)} cells, expected {n}"
            )
        for c, cell in enumerate(row):
            try:
                x = float(cell)
            except ValueError:
                x = np.nan
            if not np.isfinite(x):
                raise DataError(
                    f"{data_path}: non-numeric value {cell!r} at line {lineno}, "
                    f"column {names[c]!r}"
                )
            values[r, c] = x
    if values.shape[0] == 0:
        raise DataError(f"{data_path}: no data rows")
    return tuple(names), values.T.copy()


def load_dataset(
    data_path: str | Path,
    modality_path: str | Path,
    labels_path: str | Path | None = None,
    split: str = "train",
) -> TimeSeriesDataset:
    """Load a dataset from a data CSV plus a modality JSON map.

    The modality file is a flat JSON object mapping series name to an
    integer modality id covering 1..M.
    """
    names, values = read_data_csv(data_path)

    with open(modality_path) as fh:
        try:
            mod_map = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{modality_path}: invalid JSON ({exc})") from exc
    if not isinstance(mod_map, dict):
        raise DataError(f"{modality_path}: expected a flat name -> id object")
    unknown = sorted(set(mod_map) - set(names))
    if unknown:
        raise DataError(f"{modality_path}: unknown series in modality map: {unknown}")
    missing = sorted(set(names) - set(mod_map))
    if missing:
        raise DataError(f"{modality_path}: modality map missing series: {missing}")
    try:
        modality = tuple(int(mod_map[name]) for name in names)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{modality_path}: modality ids must be integers") from exc

    labels = None
    if labels_path is not None:
        labels = read_labels_csv(labels_path, values.shape[1])

    return TimeSeriesDataset(
        names=names,
        values=values,
        modality=modality,
        labels=labels,
        split=split,
    )


def read_labels_csv(path: str | Path, n_timestamps: int) -> np.ndarray:
    """Read a `timestamp_index,label` CSV into a dense (T,) 0/1 vector."""
    header, rows = _read_csv_rows(path)
    if [h.strip() for h in header[:2]] != ["timestamp_index", "label"]:
        raise DataError(f"{path}: expected header 'timestamp_index,label'")
    labels = np.zeros(n_timestamps, dtype=np.int8)
    for lineno, row in rows:
        try:
            idx, lab = int(row[0]), int(row[1])
        except (IndexError, ValueError) as exc:
            raise DataError(f"{path}: bad row at line {lineno}: {row}") from exc
        if not 0 <= idx < n_timestamps:
            raise DataError(f"{path}: timestamp index {idx} out of range at line {lineno}")
        if lab not in (0, 1):
            raise DataError(f"{path}: label must be 0/1 at line {lineno}")
        labels[idx] = lab
    return labels


def write_labels_csv(path: str | Path, labels: np.ndarray, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp_index", "label"])
        for i, lab in enumerate(np.asarray(labels, dtype=int)):
            writer.writerow([i, int(lab)])


def write_dataset_csv(path: str | Path, ds: TimeSeriesDataset, header_comment: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(ds.names)
        for row in ds.values.T:
            writer.writerow([repr(float(x)) for x in row])


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-series min-max scaling parameters fitted on the training split."""

    offset: np.ndarray      # per-series minimum
    scale: np.ndarray       # per-series max - min, 1.0 for constant series
    constant: np.ndarray    # bool mask of degenerate (constant) series


def fit_norm_stats(train: TimeSeriesDataset) -> NormStats:
    lo = train.values.min(axis=1)
    hi = train.values.max(axis=1)
    scale = hi - lo
    constant = scale == 0.0
    if constant.any():
        names = [train.names[i] for i in np.flatnonzero(constant)]
        warnings.warn(
            f"constant training series scaled by 1: {names}", stacklevel=2
        )
    scale = np.where(constant, 1.0, scale)
    return NormStats(offset=lo, scale=scale, constant=constant)


def apply_norm(
    ds: TimeSeriesDataset, stats: NormStats, clip: tuple[float, float] | None = None
) -> TimeSeriesDataset:
    scaled = (ds.values - stats.offset[:, None]) / stats.scale[:, None]
    if clip is not None:
        scaled = np.clip(scaled, clip[0], clip[1])
    return ds.with_values(scaled)


def denormalize(values: np.ndarray, stats: NormStats) -> np.ndarray:
    """Invert `apply_norm` on an (N, T) or (N,) array of scaled values."""
    values = np.asarray(values)
    if values.ndim == 1:
        return values * stats.scale + stats.offset
    return values * stats.scale[:, None] + stats.offset[:, None]


def normalize(
    train: TimeSeriesDataset, test: TimeSeriesDataset
) -> tuple[TimeSeriesDataset, TimeSeriesDataset, NormStats]:
    """Min-max scale both splits using statistics fitted on train only.

    Train values land in [0, 1]; test values are clipped to [-1, 2] after
    scaling so anomalies stay bounded without being erased.
    """
    if train.names != test.names or train.modality != test.modality:
        raise DataError("train and test must share series names and modalities")
    stats = fit_norm_stats(train)
    return apply_norm(train, stats), apply_norm(test, stats, clip=TEST_CLIP), stats


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


def window_count(n_timestamps: int, w: int, stride: int = 1) -> int:
    if w > n_timestamps:
        raise DataError(f"window length {w} exceeds series length {n_timestamps}")
    if stride < 1:
        raise DataError("stride must be >= 1")
    return (n_timestamps - w) // stride + 1


def make_windows(ds: TimeSeriesDataset, w: int, stride: int = 1) -> list[WindowBatch]:
    """Slice the dataset into sliding windows of length w.

    Windows end at timestamps w-1, w-1+stride, ... (0-based). Every window
    that is not the dataset's final one carries the next observation.
    """
    t_total = ds.n_timestamps
    count = window_count(t_total, w, stride)
    out = []
    for k in range(count):
        end = w - 1 + k * stride
        nxt = ds.values[:, end + 1].copy() if end + 1 < t_total else None
        out.append(WindowBatch(window=ds.values[:, end - w + 1 : end + 1],
                               next_value=nxt, t_end=end))
    return out


def window_ends(n_timestamps: int, w: int, stride: int = 1) -> np.ndarray:
    """0-based end indices of all sliding windows (vectorized counterpart)."""
    count = window_count(n_timestamps, w, stride)
    return w - 1 + stride * np.arange(count)


def stack_windows(values: np.ndarray, ends: np.ndarray, w: int) -> np.ndarray:
    """Gather windows ending at `ends` from an (N, T) matrix into (B, N, w)."""
    idx = ends[:, None] - np.arange(w - 1, -1, -1)[None, :]   # (B, w)
    return values[:, idx].transpose(1, 0, 2)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic multimodal generator.

    `length` is the test-split length; the training split defaults to twice
    that. Series within a modality share a latent sinusoid-plus-trend driver
    with correlated noise; drivers differ across modalities. The test split
    carries labeled anomalies of three kinds: point spikes, stuck-at
    segments, and intra-modal decorrelation.
    """

    n_series: int = 10
    n_modalities: int = 3
    length: int = 2000
    anomaly_fraction: float = 0.05
    train_length: int | None = None
    kinds: tuple[str, ...] = ("spike", "stuck", "decorrelation")
    n_events: int | None = None     # exact event count; overrides the fraction
    margin: int = 64                # anomaly-free lead-in of the test split

    def __post_init__(self) -> None:
        if self.n_modalities > self.n_series or self.n_modalities < 1:
            raise DataError("need 1 <= n_modalities <= n_series")
        if not 0.0 <= self.anomaly_fraction <= 0.3:
            raise DataError("anomaly_fraction must lie in [0, 0.3]")
        bad = set(self.kinds) - {"spike", "stuck", "decorrelation"}
        if bad:
            raise DataError(f"unknown anomaly kinds: {sorted(bad)}")

    @property
    def resolved_train_length(self) -> int:
        return 2 * self.length if self.train_length is None else self.train_length


def _drivers(spec: SynthSpec, rng: np.random.Generator, t_total: int) -> np.ndarray:
    """Latent per-modality signals over the full (train + test) horizon."""
    t = np.arange(t_total, dtype=np.float64)
    out = np.empty((spec.n_modalities, t_total))
    for m in range(spec.n_modalities):
        p1 = rng.uniform(40.0, 120.0)
        p2 = p1 / rng.uniform(2.7, 4.3)
        ph1, ph2 = rng.uniform(0.0, 2 * np.pi, size=2)
        amp2 = rng.uniform(0.2, 0.45)
        slope = rng.uniform(-0.25, 0.25)
        out[m] = (
            np.sin(2 * np.pi * t / p1 + ph1)
            + amp2 * np.sin(2 * np.pi * t / p2 + ph2)
            + slope * t / t_total
        )
    return out


def _ar1(rng: np.random.Generator, t_total: int, rho: float = 0.9) -> np.ndarray:
    eps = rng.standard_normal(t_total)
    out = np.empty(t_total)
    out[0] = eps[0]
    for i in range(1, t_total):
        out[i] = rho * out[i - 1] + eps[i]
    return out * np.sqrt(1.0 - rho * rho)


def synthesize_ex(
    spec: SynthSpec, seed: int
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Generate (train, test) splits; the test split carries labels and events."""
    ss = np.random.SeedSequence(seed)
    r_driver, r_series, r_noise, r_anom = (np.random.default_rng(s) for s in ss.spawn(4))

    n, m_count = spec.n_series, spec.n_modalities
    t_train, t_test = spec.resolved_train_length, spec.length
    t_total = t_train + t_test

    # Round-robin modality assignment guarantees every id occurs.
    modality = tuple(i % m_count + 1 for i in range(n))
    names = tuple(f"s{i:02d}_m{modality[i]}" for i in range(n))

    drivers = _drivers(spec, r_driver, t_total)
    mod_noise = np.stack([_ar1(r_noise, t_total) for _ in range(m_count)])

    amp = r_series.uniform(0.6, 1.4, size=n)
    offs = r_series.uniform(-1.0, 1.0, size=n)
    shared_noise = 0.08
    own_noise = 0.04

    values = np.empty((n, t_total))
    for i in range(n):
        mi = modality[i] - 1
        values[i] = (
            amp[i] * drivers[mi]
            + offs[i]
            + shared_noise * mod_noise[mi]
            + own_noise * r_noise.standard_normal(t_total)
        )

    labels = np.zeros(t_test, dtype=np.int8)
    events: list[AnomalyEvent] = []
    train_std = values[:, :t_train].std(axis=1)

    target = int(round(spec.anomaly_fraction * t_test))
    if spec.n_events is not None:
        budget = None
    elif target > 0:
        budget = target
    else:
        budget = 0

    def free_slot(start: int, length: int) -> bool:
        lo = max(0, start - 8)
        hi = min(t_test, start + length + 8)
        return not labels[lo:hi].any()

    def inject(kind: str, max_len: int | None) -> bool:
        """Place one event of the given kind; returns False if no slot found."""
        series = int(r_anom.integers(0, n))
        mi = modality[series] - 1
        if kind == "spike":
            length = int(r_anom.integers(1, 3))
        elif kind == "stuck":
            length = int(r_anom.integers(30, 80))
        else:
            length = int(r_anom.integers(40, 90))
        if max_len is not None:
            length = max(1, min(length, max_len))
        hi = t_test - length - 8
        if hi <= spec.margin:
            return False  # split too short for this event
        for _ in range(200):
            start = int(r_anom.integers(spec.margin, hi))
            if free_slot(start, length):
                break
        else:
            return False
        a, b = t_train + start, t_train + start + length  # absolute columns
        if kind == "spike":
            sign = -1.0 if r_anom.random() < 0.5 else 1.0
            values[series, a:b] += sign * (5.0 + 3.0 * r_anom.random()) * train_std[series]
        elif kind == "stuck":
            values[series, a:b] = values[series, a - 1]
        else:  # decorrelation: the series leaves its modality's driver
            t_loc = np.arange(a, b, dtype=np.float64)
            p_alt = r_anom.uniform(15.0, 30.0)
            ph_alt = r_anom.uniform(0.0, 2 * np.pi)
            alt = np.sin(2 * np.pi * t_loc / p_alt + ph_alt)
            values[series, a:b] = (
                amp[series] * alt
                + offs[series]
                + shared_noise * mod_noise[mi, a:b]
                + own_noise * r_anom.standard_normal(b - a)
            )
        labels[start : start + length] = 1
        events.append(AnomalyEvent(kind=kind, series=series, start=start,
                                   end=start + length - 1))
        return True

    if spec.n_events is not None:
        k = 0
        while len(events) < spec.n_events and k < 50 * spec.n_events:
            inject(spec.kinds[len(events) % len(spec.kinds)], None)
            k += 1
    elif budget:
        k = 0
        while labels.sum() < 0.92 * budget and k < 10_000:
            room = int(np.ceil(1.08 * budget - labels.sum()))
            inject(spec.kinds[len(events) % len(spec.kinds)], room)
            k += 1

    train = TimeSeriesDataset(
        names=names, values=values[:, :t_train], modality=modality, split="train"
    )
    test = TimeSeriesDataset(
        names=names,
        values=values[:, t_train:],
        modality=modality,
        labels=labels,
        split="test",
        events=tuple(events),
    )
    return train, test


def synthesize(
    n_series: int,
    n_modalities: int,
    length: int,
    anomaly_fraction: float,
    seed: int,
    train_length: int | None = None,
) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    """Generate a seeded multimodal dataset pair (train, labeled test)."""
    spec = SynthSpec(
        n_series=n_series,
        n_modalities=n_modalities,
        length=length,
        anomaly_fraction=anomaly_fraction,
        train_length=train_length,
    )
    return synthesize_ex(spec, seed)
