"""Training losses: pixel-wise L1/L2, DSSIM, perceptual, weight decay and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from . import records
from .autodiff import ParamStore, Tensor
from .errors import ConfigError, FormatError, ShapeError

SSIM_C1 = 4e-4
SSIM_C2 = 3.6e-3
RECONSTRUCTIONS = ("L1", "L2", "DSSIM")
EXTRACTORS = ("none", "random_conv", "vgg16")

# VGG16 up to conv5_3: (stage widths, convs per stage); 2x2 pooling between stages
VGG16_STAGES = ((64, 2), (128, 2), (256, 3), (512, 3), (512, 3))


@dataclass(frozen=True)
class LossConfig:
    reconstruction: str = "L2"
    lambda1: float = 0.0
    lambda2: float = 0.0
    perceptual_extractor: str = "none"
    extractor_seed: int = 0
    vgg_weights: str | None = None
    ssim_convention: str = "paper"
    decay_all: bool = False

    def __post_init__(self):
        if self.reconstruction not in RECONSTRUCTIONS:
            raise ConfigError(f"reconstruction must be one of {RECONSTRUCTIONS}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.perceptual_extractor not in EXTRACTORS:
            raise ConfigError(f"perceptual_extractor must be one of {EXTRACTORS}")
        if self.lambda1 > 0 and self.perceptual_extractor == "none":
            raise ConfigError("lambda1 > 0 needs a perceptual extractor")
        if (self.perceptual_extractor == "vgg16") != (self.vgg_weights is not None):
            raise ConfigError("vgg_weights is required exactly when the vgg16 extractor is selected")
        if self.ssim_convention not in ("paper", "standard"):
            raise ConfigError("ssim_convention must be 'paper' or 'standard'")


def _check_pair(y_true: Tensor, y_pred: Tensor) -> None:
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")


def pixel_loss(y_true, y_pred, x: int = 2) -> Tensor:
    """Half the summed |difference|**x over every element (no averaging)."""
    y_true, y_pred = ad._wrap(y_true), ad._wrap(y_pred)
    _check_pair(y_true, y_pred)
    diff = y_pred - y_true
    if x == 1:
        return ad.absolute(diff).sum() * 0.5
    if x == 2:
        return (diff * diff).sum() * 0.5
    raise ValueError(f"x must be 1 or 2, got {x}")


# ---------------------------------------------------------------- SSIM


@lru_cache(maxsize=None)
def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized 2D Gaussian (outer product of the 1D kernel), float64."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    win = np.outer(g, g)
    win /= win.sum()
    win.setflags(write=False)
    return win


def ssim_per_frame(y_true, y_pred, size: int = 11, sigma: float = 1.5,
                   c1: float = SSIM_C1, c2: float = SSIM_C2) -> Tensor:
    """Mean local SSIM for each (sample, frame); returns shape (M, I).

    Local statistics come from the Gaussian window at valid positions only.
    """
    y_true, y_pred = ad._wrap(y_true), ad._wrap(y_pred)
    _check_pair(y_true, y_pred)
    if y_true.ndim != 4:
        raise ShapeError(f"expected (M, I, H, W), got {y_true.shape}")
    M, I, H, W = y_true.shape
    if H < size or W < size:
        raise ShapeError(f"image {H}x{W} smaller than the {size}x{size} window")
    dtype = np.float64 if y_pred.data.dtype == np.float64 else np.float32
    win = Tensor(gaussian_window(size, sigma).reshape(1, 1, size, size), dtype=dtype)
    a = y_true.reshape(M * I, 1, H, W)
    b = y_pred.reshape(M * I, 1, H, W)

    def blur(t):
        return ad.conv2d(t, win, padding=0)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    smap = num / den
    return smap.mean(axis=(1, 2, 3)).reshape(M, I)


def dssim(y_true, y_pred, convention: str = "paper", size: int = 11, sigma: float = 1.5) -> Tensor:
    """1 - SSIM. ``convention="paper"`` keeps the extra 1/2 in the average, so
    identical images score 0.5; ``"standard"`` drops it and scores 0."""
    if convention not in ("paper", "standard"):
        raise ValueError(f"unknown SSIM convention {convention!r}")
    per = ssim_per_frame(y_true, y_pred, size, sigma)
    M, I = per.shape
    scale = 1.0 / (2 * M * I) if convention == "paper" else 1.0 / (M * I)
    return 1.0 - per.sum() * scale


# ---------------------------------------------------------------- perceptual


class FeatureExtractor:
    """Fixed VGG16-shaped stack (through conv5_3, post-ReLU); weights are not trained."""

    def __init__(self, weights: dict[str, np.ndarray]):
        self.weights = {}
        c_in = 3
        for s, (width, n) in enumerate(VGG16_STAGES, start=1):
            for i in range(1, n + 1):
                for suffix, shape in (("weight", (width, c_in, 3, 3)), ("bias", (width,))):
                    name = f"conv{s}_{i}.{suffix}"
                    if name not in weights:
                        raise FormatError(f"extractor weights missing {name!r}")
                    arr = np.asarray(weights[name], dtype=np.float32)
                    if arr.shape != shape:
                        raise FormatError(f"{name}: expected shape {shape}, got {arr.shape}")
                    self.weights[name] = Tensor(arr)
                c_in = width

    def __call__(self, frames: Tensor) -> Tensor:
        """Features of (M, I, H, W) grayscale frames, each frame treated as one image."""
        M, I, H, W = frames.shape
        x = frames.reshape(M * I, 1, H, W)
        x = ad.concat_channels([x, x, x])
        dtype = x.data.dtype
        for s, (_, n) in enumerate(VGG16_STAGES, start=1):
            if s > 1:
                x = ad.maxpool2d(x)
            for i in range(1, n + 1):
                w = self.weights[f"conv{s}_{i}.weight"]
                b = self.weights[f"conv{s}_{i}.bias"]
                if dtype == np.float64:
                    w, b = Tensor(w.data.astype(np.float64)), Tensor(b.data.astype(np.float64))
                x = ad.relu(ad.conv2d(x, w, b))
        return x


def random_conv_weights(seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    weights, c_in = {}, 3
    for s, (width, n) in enumerate(VGG16_STAGES, start=1):
        for i in range(1, n + 1):
            std = np.sqrt(2.0 / (9 * c_in))
            weights[f"conv{s}_{i}.weight"] = (rng.standard_normal((width, c_in, 3, 3)) * std).astype(np.float32)
            weights[f"conv{s}_{i}.bias"] = np.zeros(width, dtype=np.float32)
            c_in = width
    return weights


def build_extractor(config: LossConfig) -> FeatureExtractor | None:
    if config.perceptual_extractor == "none":
        return None
    if config.perceptual_extractor == "random_conv":
        return FeatureExtractor(random_conv_weights(config.extractor_seed))
    try:
        rf = records.read(config.vgg_weights)
    except OSError as exc:
        raise FormatError(f"cannot read VGG weights {config.vgg_weights!r}: {exc}") from None
    return FeatureExtractor(rf.records)


def perceptual_loss(y_true, y_pred, extractor: FeatureExtractor) -> Tensor:
    """Half the summed squared feature difference; the target branch is constant."""
    y_true, y_pred = ad._wrap(y_true), ad._wrap(y_pred)
    _check_pair(y_true, y_pred)
    if extractor is None:
        raise ConfigError("perceptual loss needs an extractor")
    with ad.no_grad():
        f_true = Tensor(extractor(y_true).data)
    diff = extractor(y_pred) - f_true
    return (diff * diff).sum() * 0.5


# ---------------------------------------------------------------- regularization


def decayed(name: str, decay_all: bool = False) -> bool:
    return decay_all or name.endswith(".weight")


def weight_decay(params: ParamStore, decay_all: bool = False) -> Tensor:
    """Half the sum of squared conv weights (every trainable tensor with ``decay_all``)."""
    total = Tensor(0.0)
    for name, p in params.items():
        if p.requires_grad and decayed(name, decay_all):
            total = total + (p * p).sum()
    return total * 0.5


def loss_terms(y_true, y_pred, params: ParamStore | None, config: LossConfig,
               extractor: FeatureExtractor | None = None) -> dict[str, Tensor]:
    """Weighted loss components and their sum under key ``"total"``.

    Summed pixel and perceptual terms are divided by the batch size; DSSIM is
    already a batch average and is used as is.
    """
    y_true, y_pred = ad._wrap(y_true), ad._wrap(y_pred)
    _check_pair(y_true, y_pred)
    m = y_true.shape[0]
    if config.reconstruction == "DSSIM":
        recon = dssim(y_true, y_pred, config.ssim_convention)
    else:
        recon = pixel_loss(y_true, y_pred, 1 if config.reconstruction == "L1" else 2) * (1.0 / m)
    terms = {"recon": recon}
    total = recon
    if config.lambda1 > 0:
        if extractor is None:
            extractor = build_extractor(config)
        terms["percep"] = perceptual_loss(y_true, y_pred, extractor) * (config.lambda1 / m)
        total = total + terms["percep"]
    else:
        terms["percep"] = Tensor(0.0)
    if config.lambda2 > 0 and params is not None:
        terms["reg"] = weight_decay(params, config.decay_all) * (config.lambda2 / 2.0)
        total = total + terms["reg"]
    else:
        terms["reg"] = Tensor(0.0)
    terms["total"] = total
    return terms


def combined_loss(y_true, y_pred, params: ParamStore | None, config: LossConfig,
                  extractor: FeatureExtractor | None = None) -> Tensor:
    return loss_terms(y_true, y_pred, params, config, extractor)["total"]
