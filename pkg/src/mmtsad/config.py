"""Detector configuration: defaults, TOML loading, validation, hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["AblationFlags", "DetectorConfig", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Raised for a missing or invalid configuration key."""


@dataclass(frozen=True)
class AblationFlags:
    """Switches that remove model components for ablation runs."""

    disable_modal: bool = False       # drop intra-/inter-modal attention branches
    disable_temporal: bool = False    # replace the conv stack with identity + pool
    disable_topk: bool = False        # complete graph (K = N)
    disable_attention: bool = False   # uniform weights over neighbors


@dataclass(frozen=True)
class DetectorConfig:
    """All tunables of the detector.

    The defaults are the reference operating point: sliding window 32,
    4 attention heads, temporal kernel 16, embedding width 128, loss
    balance 0.5, score balance 0.8, Adam at 1e-3, batch 32, 60 epochs.
    """

    window: int = 32
    stride: int = 1
    embed_dim: int = 128
    topk: int = 15
    heads: int = 4
    gat_layers: int = 1
    conv_kernel: int = 16
    conv_layers: int = 1
    latent_dim: int = 32
    gamma1: float = 0.5
    gamma2: float = 0.8
    lr: float = 1e-3
    batch: int = 32
    epochs: int = 60
    seed: int = 0
    pot_q: float = 1e-3
    pot_init_level: float = 0.98
    ablation: AblationFlags = field(default_factory=AblationFlags)

    # Secondary knobs (sized for desk-scale runs; rarely touched).
    time_channels: int = 8        # channels of the time-resolved feature lift
    conv_channels: int = 16       # output channels of the temporal conv stack
    score_hidden: int = 32        # hidden width of the relational score MLP
    enc_hidden: int = 64          # VAE encoder hidden width
    dec_hidden: int = 64          # VAE decoder hidden width
    pred_hidden: int = 64         # predictor MLP hidden width
    mc_samples_train: int = 1     # latent samples per window while training
    mc_samples_infer: int = 8     # latent samples per window while scoring
    val_fraction: float = 0.10    # tail share of the training split held out
    kl_warmup_epochs: int = 5     # linear anneal of the KL weight
    clip_norm: float = 5.0        # global gradient-norm clip
    pool: str = "mean"            # time pooling: "mean" or "max"
    dtype: str = "float32"        # parameter/activation dtype for training

    def __post_init__(self) -> None:
        if self.window < 2:
            raise ConfigError("window must be >= 2")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if not 0.0 <= self.gamma1 <= 1.0:
            raise ConfigError("gamma1 must lie in [0, 1]")
        if self.gamma2 < 0.0:
            raise ConfigError("gamma2 must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.topk < 1:
            raise ConfigError("topk must be >= 1")
        if not 0.0 < self.pot_q < self.pot_init_level < 1.0:
            raise ConfigError("require 0 < pot_q < pot_init_level < 1")
        if self.heads < 1 or self.embed_dim * 2 % self.heads:
            raise ConfigError("heads must divide the summary width (2 * embed_dim)")
        if self.time_channels % self.heads:
            raise ConfigError("heads must divide time_channels")
        if self.conv_kernel < 1 or self.conv_kernel > self.window:
            raise ConfigError("conv_kernel must lie in [1, window]")
        if self.pool not in ("mean", "max"):
            raise ConfigError("pool must be 'mean' or 'max'")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be 'float32' or 'float64'")

    # Derived sizes -----------------------------------------------------

    @property
    def summary_width(self) -> int:
        return 2 * self.embed_dim

    @property
    def feature_channels(self) -> int:
        """Channels of the per-node vector handed to the heads."""
        if self.ablation.disable_temporal:
            return self.time_channels
        return self.conv_channels

    def np_dtype(self):
        import numpy as np

        return np.float64 if self.dtype == "float64" else np.float32

    def replace(self, **kw) -> "DetectorConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablation"] = dataclasses.asdict(self.ablation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ab = d.pop("ablation", {})
        if isinstance(ab, dict):
            ab_known = {f.name for f in dataclasses.fields(AblationFlags)}
            ab_unknown = set(ab) - ab_known
            if ab_unknown:
                raise ConfigError(f"unknown ablation keys: {sorted(ab_unknown)}")
            ab = AblationFlags(**ab)
        return cls(ablation=ab, **d)


def load_config(path: str | Path, required: tuple[str, ...] = ()) -> DetectorConfig:
    """Load a flat TOML config file.

    Unset keys fall back to defaults. `required` names keys that must be
    present; a missing one raises ConfigError naming the key.
    """
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    for key in required:
        head = key.split(".", 1)[0]
        if head not in raw or ("." in key and key.split(".", 1)[1] not in raw[head]):
            raise ConfigError(f"config {path} is missing required key '{key}'")
    return DetectorConfig.from_dict(raw)


def config_hash(cfg: DetectorConfig) -> str:
    """Stable short hash of a configuration, for stamping output files."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]
