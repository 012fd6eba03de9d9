"""Configuration records shared by every stage of the renderer.

All records are plain dataclasses so that they can be echoed into reports and
checkpoints as JSON and merged from files or command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field, fields
from typing import Any

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised for invalid shapes, sizes, or configuration values."""


@dataclass
class StftConfig:
    window_len: int = 512
    hop: int = 256
    window: str = "hamming"
    centered: bool = True

    def __post_init__(self):
        if self.window_len <= 1:
            raise ConfigError(f"window_len must be > 1, got {self.window_len}")
        if self.hop <= 0 or self.window_len % self.hop != 0:
            raise ConfigError(f"hop {self.hop} must divide window_len {self.window_len}")
        if self.window != "hamming":
            raise ConfigError(f"unsupported window {self.window!r}")

    @property
    def bins(self) -> int:
        return self.window_len // 2 + 1


@dataclass
class WarpConfig:
    ear_offset: float = 0.09
    speed_of_sound: float = 343.0
    fs: int = 48000
    neural_enabled: bool = True
    w_max: float = 64.0
    neural_channels: int = 16
    neural_layers: int = 3
    kernel: int = 3
    pose_rate: float = 120.0

    def __post_init__(self):
        if self.ear_offset < 0:
            raise ConfigError("ear_offset must be non-negative")
        if self.w_max < 0:
            raise ConfigError("w_max must be non-negative")
        if self.kernel % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.kernel}")
        if self.neural_layers < 1:
            raise ConfigError("neural_layers must be >= 1")


@dataclass
class EncodingConfig:
    n_f: int = 8
    n_t: int = 12
    use_freq_pe: bool = True
    use_time_pe: bool = True

    def __post_init__(self):
        if self.n_f < 1 or self.n_t < 1:
            raise ConfigError("n_f and n_t must be >= 1")

    @property
    def coord_dim(self) -> int:
        return 7 + 2 + 2 * self.n_f + 2 * self.n_t


@dataclass
class IbcConfig:
    hidden: int = 256
    layers: int = 3
    alpha: float = 0.8
    enabled: bool = True


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.01

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class OptimConfig:
    lr_max: float = 1e-3
    lr_min: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    chunk_len: int = 38400
    chunk_hop: int | None = None
    preroll: int = 1024
    seed: int = 0
    threads: int = 1


@dataclass
class ModelConfig:
    """Full configuration of a trainable renderer.

    ``frames_per_chunk`` is the time-encoding period: frame indices are
    normalised by ``frames_per_chunk - 1``.
    """

    stft: StftConfig = field(default_factory=StftConfig)
    warp: WarpConfig = field(default_factory=WarpConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    ibc: IbcConfig = field(default_factory=IbcConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    frames_per_chunk: int = 151
    quat_order: str = "xyzw"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        return merge(cls(), d)


# Fields that define the network shape; a checkpoint's values win over overrides.
# Ablation switches (ibc.enabled, encoding.use_*_pe) stay overridable at runtime;
# warp.neural_enabled may be switched off but not on.
ARCHITECTURE_KEYS = {
    "stft": {"window_len", "hop", "window", "centered"},
    "warp": {"neural_channels", "neural_layers", "kernel", "w_max",
             "ear_offset", "speed_of_sound", "fs", "pose_rate"},
    "encoding": {"n_f", "n_t"},
    "ibc": {"hidden", "layers", "alpha"},
    "frames_per_chunk": None,
    "quat_order": None,
}

_SECTIONS = {
    "stft": StftConfig, "warp": WarpConfig, "encoding": EncodingConfig, "ibc": IbcConfig,
    "loss": LossWeights, "optim": OptimConfig, "train": TrainConfig,
}


def merge(cfg: ModelConfig, overrides: dict[str, Any]) -> ModelConfig:
    """Return a copy of ``cfg`` with nested ``overrides`` applied."""
    d = cfg.to_dict()
    for key, value in overrides.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            known = {f.name for f in fields(_SECTIONS[key])}
            unknown = set(value) - known
            if unknown:
                raise ConfigError(f"unknown {key} fields: {sorted(unknown)}")
            d[key].update(value)
        elif key in ("frames_per_chunk", "quat_order"):
            d[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    sections = {k: cls(**d[k]) for k, cls in _SECTIONS.items()}
    return ModelConfig(frames_per_chunk=int(d["frames_per_chunk"]),
                       quat_order=str(d["quat_order"]), **sections)


def resolve(checkpoint_cfg: ModelConfig | None, *layers: dict[str, Any]) -> ModelConfig:
    """Merge defaults <- checkpoint <- each override layer in order.

    Architecture fields stored in the checkpoint are authoritative; an override
    that disagrees with them is dropped with a warning.
    """
    cfg = checkpoint_cfg if checkpoint_cfg is not None else ModelConfig()
    for layer in layers:
        if not layer:
            continue
        layer = _strip_architecture(layer, checkpoint_cfg) if checkpoint_cfg else layer
        cfg = merge(cfg, layer)
    return cfg


def _strip_architecture(layer: dict[str, Any], ckpt: ModelConfig) -> dict[str, Any]:
    stored = ckpt.to_dict()
    out: dict[str, Any] = {}
    for key, value in layer.items():
        arch = ARCHITECTURE_KEYS.get(key, ())
        if key not in ARCHITECTURE_KEYS:
            out[key] = value
        elif arch is None:
            if value != stored[key]:
                logger.warning("ignoring override %s=%r; checkpoint has %r", key, value, stored[key])
        else:
            kept = {}
            for name, v in value.items():
                if key == "warp" and name == "neural_enabled" and v and not stored[key][name]:
                    logger.warning("ignoring override warp.neural_enabled=True; "
                                   "checkpoint has no warp net")
                elif name in arch and v != stored[key][name]:
                    logger.warning("ignoring override %s.%s=%r; checkpoint has %r",
                                   key, name, v, stored[key][name])
                else:
                    kept[name] = v
            out[key] = kept
    return out
