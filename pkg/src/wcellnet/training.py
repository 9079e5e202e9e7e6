"""Minibatch training with Adam, checkpointing, CSV logging and evaluation."""

from __future__ import annotations

import csv
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .data import FrameSample, augment, collate, draw_augment, epoch_order, to_pixel_scale
from .errors import ConfigError, ShapeError
from .losses import LossConfig, build_extractor, loss_terms
from .metrics import PSNR_CAP, MetricsReport, report_from_samples, write_metrics_csv
from .model import ModelConfig, WCellNet, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOG_HEADER = ("iter", "loss_total", "loss_recon", "loss_percep", "loss_reg")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 100_000
    batch_size: int = 8
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 0
    eval_interval: int = 0
    augment: bool = True
    sampling: str = "epoch"  # or "replacement"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")
        if self.sampling not in ("epoch", "replacement"):
            raise ConfigError("sampling must be 'epoch' or 'replacement'")


@dataclass
class AdamState:
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    t: int = 0

    def state_records(self) -> "OrderedDict[str, np.ndarray]":
        recs = OrderedDict()
        recs["adam.t"] = np.array(self.t, dtype=np.float32)
        for name in self.m:
            recs[f"adam.m.{name}"] = self.m[name]
            recs[f"adam.v.{name}"] = self.v[name]
        return recs

    @classmethod
    def from_records(cls, recs) -> "AdamState":
        state = cls(t=int(recs["adam.t"])) if "adam.t" in recs else cls()
        for key, arr in recs.items():
            if key.startswith("adam.m."):
                state.m[key[7:]] = np.array(arr, dtype=np.float32)
            elif key.startswith("adam.v."):
                state.v[key[7:]] = np.array(arr, dtype=np.float32)
        return state


def adam_step(params: ParamStore, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update of every trainable tensor, then zero the grads."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = p.grad
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= np.float32(b1)
        m += np.float32(1.0 - b1) * g
        v *= np.float32(b2)
        v += np.float32(1.0 - b2) * (g * g)
        m_hat = m / np.float32(c1)
        v_hat = v / np.float32(c2)
        p.data -= np.float32(config.lr) * m_hat / (np.sqrt(v_hat) + np.float32(config.eps))
        g.fill(0)


@dataclass
class TrainResult:
    net: WCellNet
    optimizer: AdamState
    log: list[tuple]
    checkpoints: list[Path] = field(default_factory=list)


class _BatchSampler:
    def __init__(self, n: int, batch_size: int, seed: int, sampling: str):
        self.n, self.m, self.seed, self.sampling = n, batch_size, seed, sampling
        self.epoch, self.pos = 0, 0
        self.order = epoch_order(n, seed, 0)
        self.rng = np.random.default_rng([seed, 2])

    def next(self) -> np.ndarray:
        if self.sampling == "replacement":
            return self.rng.integers(0, self.n, self.m)
        idx = []
        while len(idx) < self.m:
            if self.pos == self.n:
                self.epoch += 1
                self.order = epoch_order(self.n, self.seed, self.epoch)
                self.pos = 0
            take = min(self.m - len(idx), self.n - self.pos)
            idx.extend(self.order[self.pos:self.pos + take])
            self.pos += take
        return np.asarray(idx)


def _fmt(x: float) -> str:
    return repr(float(np.float32(x)))


def write_log_csv(path, rows: Sequence[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        writer.writerows(rows)


def train(
    model_config: ModelConfig,
    loss_config: LossConfig,
    train_config: TrainConfig,
    dataset: Sequence[FrameSample],
    out_dir=None,
    val: Sequence[FrameSample] | None = None,
    net: WCellNet | None = None,
    optimizer: AdamState | None = None,
) -> TrainResult:
    """Run ``train_config.iterations`` Adam steps on minibatches of ``dataset``.

    Writes ``train_log.csv``, periodic ``ckpt_<iter>.wcnc`` files and a
    ``final.wcnc`` checkpoint into ``out_dir`` when given. Results are a pure
    function of the configs and the dataset.
    """
    if not dataset:
        raise ValueError("training dataset is empty")
    if train_config.batch_size > len(dataset) and train_config.sampling == "epoch":
        raise ConfigError(f"batch size {train_config.batch_size} exceeds {len(dataset)} training samples")
    first = dataset[0]
    if first.IF != model_config.IF:
        raise ShapeError(f"dataset has IF={first.IF}, model expects IF={model_config.IF}")
    h, w = first.frames.shape[1:]
    if (h, w) != (model_config.input_h, model_config.input_w):
        raise ShapeError(f"dataset frames are {h}x{w}, model expects {model_config.input_h}x{model_config.input_w}")

    net = net or WCellNet(model_config, seed=train_config.seed)
    optimizer = optimizer or AdamState()
    extractor = build_extractor(loss_config) if loss_config.lambda1 > 0 else None
    sampler = _BatchSampler(len(dataset), train_config.batch_size, train_config.seed, train_config.sampling)
    aug_rng = np.random.default_rng([train_config.seed, 1])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    rows, checkpoints, val_reports = [], [], []
    for it in range(1, train_config.iterations + 1):
        batch = [dataset[i] for i in sampler.next()]
        if train_config.augment:
            batch = [augment(s, draw_augment(aug_rng)) for s in batch]
        x_f, x_i, x_l = collate(batch)
        pred = net.forward(x_f, x_l, "train")
        terms = loss_terms(x_i, pred, net.store, loss_config, extractor)
        ad.backward(terms["total"])
        adam_step(net.store, optimizer, train_config)
        values = [terms[k].item() for k in ("total", "recon", "percep", "reg")]
        if not all(math.isfinite(v) for v in values):
            log.warning("non-finite loss at iteration %d: %s", it, values)
        rows.append((it, *(_fmt(v) for v in values)))
        if it == 1 or it % 100 == 0:
            log.info("iter %d loss %.6g", it, values[0])
        if out is not None and train_config.checkpoint_interval and it % train_config.checkpoint_interval == 0:
            path = out / f"ckpt_{it:07d}.wcnc"
            save_checkpoint(net, path, optimizer)
            checkpoints.append(path)
        if val and train_config.eval_interval and it % train_config.eval_interval == 0:
            report = evaluate(net, val, split=f"val@{it}")
            val_reports.append(report)
            log.info("iter %d %s mse %.6g psnr %.4f", it, report.split, report.mse, report.psnr)

    if out is not None:
        write_log_csv(out / "train_log.csv", rows)
        save_checkpoint(net, out / "final.wcnc", optimizer)
        checkpoints.append(out / "final.wcnc")
        if val_reports:
            write_metrics_csv(out / "val_metrics.csv", val_reports)
    return TrainResult(net, optimizer, rows, checkpoints)


def evaluate(checkpoint, samples: Sequence[FrameSample], split: str = "test", IF: int | None = None,
             batch_size: int = 16, scale: str = "pixel", cap: float = PSNR_CAP) -> MetricsReport:
    """Eval-mode MSE/PSNR of a net (or checkpoint path) on the [0, 255] pixel scale.

    ``scale="normalized"`` reports MSE of images divided by 255 instead.
    """
    net = checkpoint if isinstance(checkpoint, WCellNet) else load_checkpoint(checkpoint)
    samples = list(samples)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    data_if = samples[0].IF if IF is None else IF
    if data_if != net.config.IF or samples[0].IF != net.config.IF:
        raise ConfigError(f"checkpoint IF={net.config.IF} does not match data IF={data_if}")
    per = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x_f, _, x_l = collate(chunk)
        pred = to_pixel_scale(net.predict(x_f, x_l, batch_size))
        truth = np.stack([s.x_i for s in chunk]).astype(np.float64)
        d = pred - truth
        per.extend((d * d).reshape(len(chunk), -1).mean(axis=1))
    return report_from_samples(split, per, scale, cap)


def resume(path) -> tuple[WCellNet, AdamState]:
    net = load_checkpoint(path)
    return net, AdamState.from_records(net.optimizer_records)
