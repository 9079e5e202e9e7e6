"""Video stacks, windowed samples, splits, augmentation and a synthetic generator."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, ShapeError

STACK_MAGIC = b"CVIP"
STACK_VERSION = 1
_STACK_HEADER = struct.Struct("<4sHBB3I")
SPLIT_RATIOS = (0.70, 0.15, 0.15)
SECONDS_PER_FRAME = 6


@dataclass
class VideoStack:
    frames: np.ndarray  # (n_frames, H, W) uint8
    source: str = ""
    meta: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3:
            raise ShapeError(f"stack must be (n_frames, H, W), got {self.frames.shape}")
        if self.frames.dtype != np.uint8:
            if self.frames.min() < 0 or self.frames.max() > 255:
                raise ValueError("stack intensities must lie in [0, 255]")
            self.frames = self.frames.astype(np.uint8)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape

    def center_crop(self, multiple: int = 16) -> "VideoStack":
        n, h, w = self.frames.shape
        ch, cw = h - h % multiple, w - w % multiple
        top, left = (h - ch) // 2, (w - cw) // 2
        return replace(self, frames=self.frames[:, top:top + ch, left:left + cw])


@dataclass
class FrameSample:
    """IF+2 consecutive frames: first, IF intermediate targets, last."""

    frames: np.ndarray  # (IF+2, H, W), pixel scale [0, 255]
    video_id: str = ""
    start: int = 0

    @property
    def x_f(self) -> np.ndarray:
        return self.frames[0]

    @property
    def x_i(self) -> np.ndarray:
        return self.frames[1:-1]

    @property
    def x_l(self) -> np.ndarray:
        return self.frames[-1]

    @property
    def IF(self) -> int:
        return self.frames.shape[0] - 2


@dataclass(frozen=True)
class DatasetSpec:
    IF: int
    stride: int = 1
    ratios: tuple[float, float, float] = SPLIT_RATIOS

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must sum to 1, got {self.ratios}")

    @property
    def wait_time(self) -> int:
        """Seconds between first and last frame at one frame per 6 s."""
        return SECONDS_PER_FRAME * self.IF


@dataclass(frozen=True)
class AugmentParams:
    brightness: float = 0.0  # fraction of the 255 range, in [-0.1, 0.1]
    contrast: float = 1.0  # in [0.8, 1.2]
    lr_flip: bool = False
    ud_flip: bool = False


# ---------------------------------------------------------------- windows & splits


def extract_windows(video: VideoStack, IF: int, stride: int = 1) -> list[FrameSample]:
    size = IF + 2
    n = video.frames.shape[0]
    if n < size:
        raise ValueError(f"video {video.source!r} has {n} frames, needs at least {size}")
    return [FrameSample(video.frames[s:s + size], video.source, s) for s in range(0, n - size + 1, stride)]


def split_sizes(n: int, ratios: Sequence[float] = SPLIT_RATIOS) -> tuple[int, int, int]:
    """Validation and test get floor(ratio * n); training takes the remainder."""
    n_val = math.floor(round(ratios[1] * n, 9))
    n_test = math.floor(round(ratios[2] * n, 9))
    return n - n_val - n_test, n_val, n_test


def split_dataset(samples: Sequence, ratios: Sequence[float] = SPLIT_RATIOS, seed: int = 0):
    """Shuffle by ``seed`` and cut into disjoint (train, val, test) lists."""
    n_train, n_val, _ = split_sizes(len(samples), ratios)
    order = np.random.default_rng(seed).permutation(len(samples))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:n_train + n_val]]
    test = [samples[i] for i in order[n_train + n_val:]]
    return train, val, test


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Sample order for one epoch; a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


# ---------------------------------------------------------------- augmentation


def draw_augment(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        brightness=float(rng.uniform(-0.1, 0.1)),
        contrast=float(rng.uniform(0.8, 1.2)),
        lr_flip=bool(rng.random() < 0.5),
        ud_flip=bool(rng.random() < 0.5),
    )


def augment(sample: FrameSample, params: AugmentParams) -> FrameSample:
    """Contrast, then brightness, then flips; one parameter set for all frames."""
    frames = sample.frames.astype(np.float32)
    if params.contrast != 1.0:
        centre = np.float32(frames.mean())
        frames = (frames - centre) * np.float32(params.contrast) + centre
    if params.brightness != 0.0:
        frames = frames + np.float32(params.brightness * 255.0)
    frames = np.clip(frames, 0.0, 255.0)
    if params.lr_flip:
        frames = frames[:, :, ::-1]
    if params.ud_flip:
        frames = frames[:, ::-1, :]
    return replace(sample, frames=np.ascontiguousarray(frames))


def to_model_scale(pixels: np.ndarray) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)).astype(np.float32)


def to_pixel_scale(values: np.ndarray) -> np.ndarray:
    return (np.asarray(values, dtype=np.float64) + 1.0) * 127.5


def collate(samples: Sequence[FrameSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into model-scale (x_f, x_i, x_l) arrays of shape (m, ., H, W)."""
    frames = to_model_scale(np.stack([s.frames for s in samples]))
    return frames[:, :1], frames[:, 1:-1], frames[:, -1:]


# ---------------------------------------------------------------- synthetic data


def synth_generate(
    n_videos: int,
    n_frames: int,
    H: int,
    W: int,
    cell_count_range: tuple[int, int] = (1, 6),
    seed: int = 0,
    *,
    background: float = 20.0,
    shot_noise: bool = True,
    motion: str = "brownian",
    sigma_step: float = 0.7,
    speed_range: tuple[float, float] = (1.0, 2.0),
    cell_sigma_range: tuple[float, float] = (2.0, 4.0),
    peak_range: tuple[float, float] = (60.0, 140.0),
    photobleach_rate: float = 0.002,
    burst_prob: float = 0.01,
    burst_factor_range: tuple[float, float] = (3.0, 10.0),
    burst_length_range: tuple[int, int] = (1, 3),
) -> list[VideoStack]:
    """Fluorescence-like time-lapse stacks of drifting Gaussian cells.

    Cells are isotropic Gaussian blobs. Centroids follow a Brownian walk
    (``motion="brownian"``) or move at constant velocity and bounce off the
    borders (``motion="linear"``). All cells dim as ``exp(-rate * t)`` and
    occasionally flash 3-10x for a few frames. Poisson shot noise is drawn
    around the clean image. ``meta`` holds per-frame centres and peaks.
    """
    if H % 16 or W % 16:
        raise ShapeError(f"frame size {H}x{W} not divisible by 16")
    if motion not in ("brownian", "linear"):
        raise ValueError(f"unknown motion {motion!r}")
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    stacks = []
    for v, child in enumerate(np.random.SeedSequence(seed).spawn(n_videos)):
        rng = np.random.default_rng(child)
        n_cells = int(rng.integers(cell_count_range[0], cell_count_range[1] + 1))
        pos = np.column_stack([rng.uniform(0, H - 1, n_cells), rng.uniform(0, W - 1, n_cells)])
        sig = rng.uniform(*cell_sigma_range, n_cells)
        peak0 = rng.uniform(*peak_range, n_cells)
        angle = rng.uniform(0, 2 * np.pi, n_cells)
        vel = np.column_stack([np.sin(angle), np.cos(angle)]) * rng.uniform(*speed_range, n_cells)[:, None]
        burst_left = np.zeros(n_cells, dtype=int)
        burst_gain = np.ones(n_cells)
        frames = np.empty((n_frames, H, W), dtype=np.uint8)
        centres = np.empty((n_frames, n_cells, 2))
        peaks = np.empty((n_frames, n_cells))
        for t in range(n_frames):
            if t > 0:
                if motion == "brownian":
                    pos = pos + rng.normal(0.0, sigma_step, pos.shape)
                else:
                    pos = pos + vel
                    for axis, size in ((0, H), (1, W)):
                        low, high = pos[:, axis] < 0, pos[:, axis] > size - 1
                        pos[low, axis] = -pos[low, axis]
                        pos[high, axis] = 2 * (size - 1) - pos[high, axis]
                        vel[low | high, axis] *= -1
                pos = np.clip(pos, 0, [H - 1, W - 1])
            starting = (burst_left == 0) & (rng.random(n_cells) < burst_prob)
            if starting.any():
                burst_left[starting] = rng.integers(burst_length_range[0], burst_length_range[1] + 1, starting.sum())
                burst_gain[starting] = rng.uniform(*burst_factor_range, starting.sum())
            gain = np.where(burst_left > 0, burst_gain, 1.0)
            burst_left = np.maximum(burst_left - 1, 0)
            peak = peak0 * np.exp(-photobleach_rate * t) * gain
            image = np.full((H, W), background)
            for (cy, cx), s, p in zip(pos, sig, peak):
                image += p * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
            if shot_noise:
                image = rng.poisson(image).astype(np.float64)
            frames[t] = np.clip(np.rint(image), 0, 255).astype(np.uint8)
            centres[t], peaks[t] = pos, peak
        stacks.append(VideoStack(frames, source=f"synth_{seed}_{v:04d}",
                                 meta={"centres": centres, "peaks": peaks, "background": background}))
    return stacks


# ---------------------------------------------------------------- file I/O


def stack_bytes(stack: VideoStack) -> bytes:
    n, h, w = stack.frames.shape
    return _STACK_HEADER.pack(STACK_MAGIC, STACK_VERSION, 0, 0, n, h, w) + np.ascontiguousarray(stack.frames, dtype=np.uint8).tobytes()


def save_stack(stack: VideoStack, path) -> None:
    Path(path).write_bytes(stack_bytes(stack))


def load_stack(path) -> VideoStack:
    """Read a CVIP stack file, or a directory of 8-bit PGM frames in name order."""
    path = Path(path)
    if path.is_dir():
        return load_pgm_dir(path)
    buf = path.read_bytes()
    if len(buf) < _STACK_HEADER.size:
        raise FormatError(f"{path}: too short for a stack header")
    magic, version, dtype, _, n, h, w = _STACK_HEADER.unpack_from(buf)
    if magic != STACK_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != STACK_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != 0:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    payload = buf[_STACK_HEADER.size:]
    if len(payload) != n * h * w:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, expected {n * h * w}")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w).copy()
    return VideoStack(frames, source=path.stem)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"PGM image must be 2D, got {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + image.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    data = buf[pos:pos + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: truncated PGM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


def load_pgm_dir(path) -> VideoStack:
    files = sorted(Path(path).glob("*.pgm"))
    if not files:
        raise FormatError(f"{path}: no .pgm files")
    frames = [read_pgm(f) for f in files]
    if any(f.shape != frames[0].shape for f in frames):
        raise FormatError(f"{path}: PGM frames have inconsistent dimensions")
    return VideoStack(np.stack(frames), source=Path(path).name)


def load_dataset(paths: Sequence, IF: int) -> list[FrameSample]:
    """Windowed samples from every stack in ``paths`` (files, PGM dirs, or dirs of .cvip files)."""
    samples = []
    for p in paths:
        p = Path(p)
        if p.is_dir() and not any(p.glob("*.pgm")):
            stacks = [load_stack(f) for f in sorted(p.glob("*.cvip"))]
        else:
            stacks = [load_stack(p)]
        for stack in stacks:
            samples.extend(extract_windows(stack.center_crop(16), IF))
    return samples
