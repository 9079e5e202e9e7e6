"""Encoder and decoder building blocks plus parameter initialization."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ShapeError


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def add_conv(store: ParamStore, rng, name: str, c_in: int, c_out: int, k: int, init: str) -> None:
    """Register ``name.weight`` (c_out, c_in, k, k) and a zero ``name.bias``."""
    shape = (c_out, c_in, k, k)
    if init == "he":
        w = he_normal(rng, shape, c_in * k * k)
    else:
        w = glorot_uniform(rng, shape, c_in * k * k, c_out * k * k)
    store.add(f"{name}.weight", w)
    store.add(f"{name}.bias", np.zeros(c_out, dtype=np.float32))


def add_upconv(store: ParamStore, rng, name: str, c_in: int, c_out: int, k: int) -> None:
    # transposed-conv weights are laid out (c_in, c_out, k, k)
    w = glorot_uniform(rng, (c_in, c_out, k, k), c_in * k * k, c_out * k * k)
    store.add(f"{name}.weight", w)
    store.add(f"{name}.bias", np.zeros(c_out, dtype=np.float32))


def add_bn(store: ParamStore, name: str, channels: int) -> None:
    store.add(f"{name}.gamma", np.ones(channels, dtype=np.float32))
    store.add(f"{name}.beta", np.zeros(channels, dtype=np.float32))
    store.add_bn(name, channels)


class ConvBlock:
    """Two (3x3 conv -> batch norm -> ReLU) stages at constant resolution."""

    def __init__(self, name: str, c_in: int, c_out: int):
        self.name, self.c_in, self.c_out = name, c_in, c_out

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        add_conv(store, rng, f"{self.name}.conv1", self.c_in, self.c_out, 3, "he")
        add_bn(store, f"{self.name}.bn1", self.c_out)
        add_conv(store, rng, f"{self.name}.conv2", self.c_out, self.c_out, 3, "he")
        add_bn(store, f"{self.name}.bn2", self.c_out)

    def param_count(self) -> int:
        ci, co = self.c_in, self.c_out
        return 9 * ci * co + co + 9 * co * co + co + 4 * co

    def __call__(self, store: ParamStore, x: Tensor, mode: str) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name} expects {self.c_in} input channels, got {x.shape}")
        for i in (1, 2):
            conv, bn = f"{self.name}.conv{i}", f"{self.name}.bn{i}"
            x = ad.conv2d(x, store[f"{conv}.weight"], store[f"{conv}.bias"])
            x = ad.batch_norm(x, store[f"{bn}.gamma"], store[f"{bn}.beta"], mode, store.bn[bn])
            x = ad.relu(x)
        return x


class UpConvBlock:
    """2x learned upsampling followed by a 3x3 conv and Tanh.

    ``upsample`` is ``"transpose"`` (stride-2 transposed conv with kernel
    ``kernel``) or ``"nearest"`` (nearest-neighbour doubling followed by a
    learned 3x3 conv).
    """

    def __init__(self, name: str, c_in: int, c_out: int, upsample: str = "transpose", kernel: int = 3):
        if upsample not in ("transpose", "nearest"):
            raise ValueError(f"unknown upsample mode {upsample!r}")
        self.name, self.c_in, self.c_out = name, c_in, c_out
        self.upsample, self.kernel = upsample, kernel

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        if self.upsample == "transpose":
            add_upconv(store, rng, f"{self.name}.up", self.c_in, self.c_out, self.kernel)
        else:
            add_conv(store, rng, f"{self.name}.up", self.c_in, self.c_out, 3, "glorot")
        add_conv(store, rng, f"{self.name}.conv", self.c_out, self.c_out, 3, "glorot")

    def param_count(self) -> int:
        k = self.kernel if self.upsample == "transpose" else 3
        return k * k * self.c_in * self.c_out + self.c_out + 9 * self.c_out ** 2 + self.c_out

    def __call__(self, store: ParamStore, x: Tensor, mode: str) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name} expects {self.c_in} input channels, got {x.shape}")
        w, b = store[f"{self.name}.up.weight"], store[f"{self.name}.up.bias"]
        if self.upsample == "transpose":
            x = ad.conv_transpose2d(x, w, b, stride=2)
        else:
            x = ad.conv2d(ad.upsample_nearest2x(x), w, b)
        x = ad.conv2d(x, store[f"{self.name}.conv.weight"], store[f"{self.name}.conv.bias"])
        return ad.tanh(x)
