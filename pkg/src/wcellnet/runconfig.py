"""Flat ``key = value`` run configuration with a validated key registry."""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text):
    return None if text in (None, "", "none") else int(text)


def _opt_str(text):
    return None if text in (None, "", "none") else str(text)


# key -> (section, field name, parser)
REGISTRY = {
    "k": ("model", "k", int),
    "if": ("model", "IF", int),
    "input_h": ("model", "input_h", _opt_int),
    "input_w": ("model", "input_w", _opt_int),
    "upsample_mode": ("model", "upsample_mode", str),
    "upconv_kernel": ("model", "upconv_kernel", int),
    "head_kernel": ("model", "head_kernel", int),
    "reconstruction": ("loss", "reconstruction", str),
    "lambda1": ("loss", "lambda1", float),
    "lambda2": ("loss", "lambda2", float),
    "perceptual_extractor": ("loss", "perceptual_extractor", str),
    "extractor_seed": ("loss", "extractor_seed", int),
    "vgg_weights": ("loss", "vgg_weights", _opt_str),
    "ssim_convention": ("loss", "ssim_convention", str),
    "decay_all": ("loss", "decay_all", _bool),
    "iterations": ("train", "iterations", int),
    "batch_size": ("train", "batch_size", int),
    "lr": ("train", "lr", float),
    "beta1": ("train", "beta1", float),
    "beta2": ("train", "beta2", float),
    "adam_eps": ("train", "eps", float),
    "seed": ("train", "seed", int),
    "checkpoint_interval": ("train", "checkpoint_interval", int),
    "eval_interval": ("train", "eval_interval", int),
    "augment": ("train", "augment", _bool),
    "sampling": ("train", "sampling", str),
    "data": ("run", "data", lambda s: [p.strip() for p in str(s).split(",") if p.strip()]),
    "split_seed": ("run", "split_seed", _opt_int),
    "out_dir": ("run", "out_dir", str),
}


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values: dict = {}
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value) -> None:
        key = key.strip().lower().replace("-", "_")
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        parser = REGISTRY[key][2]
        try:
            self.values[key] = parser(value) if isinstance(value, str) else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from None

    def update(self, overrides: dict) -> None:
        for key, value in overrides.items():
            if value is not None:
                self.set(key, value)

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def _section(self, section: str) -> dict:
        return {REGISTRY[k][1]: v for k, v in self.values.items() if REGISTRY[k][0] == section}

    def model_config(self, **defaults) -> ModelConfig:
        kwargs = {**defaults, **{k: v for k, v in self._section("model").items() if v is not None}}
        return ModelConfig(**kwargs)

    def loss_config(self) -> LossConfig:
        return LossConfig(**self._section("loss"))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self._section("train"))


def parse_run_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        try:
            cfg.set(key, value.strip())
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_run_config(path) -> RunConfig:
    return parse_run_config(Path(path).read_text())

