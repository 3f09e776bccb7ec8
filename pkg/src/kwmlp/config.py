"""Run configuration: one flat JSON object whose defaults are the published recipe."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio import MfccConfig
from .mixer import MixerConfig, init_mixer
from .model import ModelConfig, init_params
from .rng import make_rng
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # training
    epochs: int = 140
    batch_size: int = 256
    optimizer: str = "adamw"
    learning_rate: float = 0.001
    warmup_epochs: int = 10
    scheduling: str = "cosine"
    lr_decay: float = 0.985
    # regularization
    label_smoothing: float = 0.1
    weight_decay: float = 0.1
    block_survival_prob: float = 0.9
    # audio processing
    sampling_rate: int = 16000
    window_length_ms: float = 30.0
    hop_length_ms: float = 10.0
    n_mfcc: int = 40
    n_mels: int = 40
    fft_size: int = 512
    fmin: float = 20.0
    fmax: float = 8000.0
    log_floor: float = 1e-6
    # augmentation
    spec_augment: bool = True
    num_time_masks: int = 2
    time_mask_width: list[int] = field(default_factory=lambda: [0, 25])
    num_freq_masks: int = 2
    freq_mask_width: list[int] = field(default_factory=lambda: [0, 7])
    # model
    arch: str = "kwmlp"
    norm: str = "post"
    num_blocks: int = 12
    input_mfcc_shape: list[int] = field(default_factory=lambda: [40, 98])
    patch_size: list[int] = field(default_factory=lambda: [40, 1])
    dim: int = 64
    dim_proj: int = 256
    num_classes: int = 35
    mixer_channels: int = 256
    mixer_token_hidden: int = 128
    mixer_channel_hidden: int = 1024
    mixer_blocks: int = 8
    # run
    seed: int = 0
    data_root: str = ""
    cache_dir: str = ""
    output_dir: str = "runs/kwmlp"
    workers: int = 0
    subset: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.arch not in ("kwmlp", "mixer"):
            raise ConfigError(f"arch must be 'kwmlp' or 'mixer', got {self.arch!r}")
        if self.norm not in ("post", "pre"):
            raise ConfigError(f"norm must be 'post' or 'pre', got {self.norm!r}")
        if self.optimizer not in ("adamw", "adam"):
            raise ConfigError(f"optimizer must be 'adamw' or 'adam', got {self.optimizer!r}")
        if self.scheduling not in ("cosine", "exponential"):
            raise ConfigError(f"scheduling must be 'cosine' or 'exponential', got {self.scheduling!r}")
        if self.sampling_rate != 16000:
            raise ConfigError("only 16 kHz audio is supported")
        for key in ("time_mask_width", "freq_mask_width"):
            lo, hi = getattr(self, key)
            if lo != 0 or hi < 0:
                raise ConfigError(f"{key} must be [0, max], got {[lo, hi]}")
        if self.input_mfcc_shape[0] != self.n_mfcc:
            raise ConfigError(f"input_mfcc_shape {self.input_mfcc_shape} disagrees with n_mfcc {self.n_mfcc}")
        try:
            frames = self.mfcc_config().num_frames
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.input_mfcc_shape[1] != frames:
            raise ConfigError(f"input_mfcc_shape {self.input_mfcc_shape} but audio settings give {frames} frames")

    # -- derived configs -----------------------------------------------------

    def mfcc_config(self) -> MfccConfig:
        ms = self.sampling_rate / 1000.0
        return MfccConfig(sample_rate=self.sampling_rate,
                          window_length=int(round(self.window_length_ms * ms)),
                          hop_length=int(round(self.hop_length_ms * ms)),
                          fft_size=self.fft_size, n_mels=self.n_mels, n_mfcc=self.n_mfcc,
                          fmin=self.fmin, fmax=self.fmax, log_floor=self.log_floor)

    def model_config(self):
        shape = tuple(self.input_mfcc_shape)
        patch = tuple(self.patch_size)
        if self.arch == "mixer":
            return MixerConfig(shape[0], shape[1], patch, self.mixer_channels, self.mixer_token_hidden,
                               self.mixer_channel_hidden, self.mixer_blocks, self.num_classes)
        return ModelConfig(shape[0], shape[1], patch, self.dim, self.dim_proj, self.num_blocks,
                           self.num_classes, self.norm)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, base_lr=self.learning_rate,
                           warmup_epochs=self.warmup_epochs, weight_decay=self.weight_decay,
                           label_smoothing=self.label_smoothing, block_survival=self.block_survival_prob,
                           time_masks=self.num_time_masks, time_mask_width_max=self.time_mask_width[1],
                           freq_masks=self.num_freq_masks, freq_mask_width_max=self.freq_mask_width[1],
                           seed=self.seed, optimizer=self.optimizer, schedule=self.scheduling,
                           lr_decay=self.lr_decay, augment=self.spec_augment)

    def build_model(self, dtype=np.float32):
        mcfg = self.model_config()
        rng = make_rng(self.seed, "init")
        if self.arch == "mixer":
            return init_mixer(mcfg, rng, dtype)
        return init_params(mcfg, rng, dtype)

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**{k: _coerce(k, v) for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "RunConfig":
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def with_overrides(self, overrides: dict) -> "RunConfig":
        d = self.to_dict()
        d.update(overrides)
        return RunConfig.from_dict(d)


_HINTS = typing.get_type_hints(RunConfig)


def _coerce(key: str, value):
    """Convert a JSON or command-line value to the field's declared type."""
    hint = _HINTS[key]
    if isinstance(value, str) and hint is not str:
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{key}: expected a list of integers, got {value!r}")
    return list(value)


def mixer_recipe(cfg: RunConfig) -> RunConfig:
    """The optimizer settings used for the Mixer ablation: Adam, exponential
    decay, batch 64, 150 epochs, no weight decay."""
    return cfg.with_overrides({"arch": "mixer", "optimizer": "adam", "scheduling": "exponential",
                               "batch_size": 64, "epochs": 150, "weight_decay": 0.0})
