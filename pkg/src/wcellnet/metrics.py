"""Interpolation baselines (FFR, LFR, WF) and MSE/PSNR metrics."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

PEAK = 255.0
PSNR_CAP = 200.0
MSE_SCALES = ("pixel", "normalized")
METRICS_HEADER = ("split", "n", "mse", "psnr")


class BaselineKind(str, enum.Enum):
    FFR = "FFR"
    LFR = "LFR"
    WF = "WF"


def time_grid(n: int) -> np.ndarray:
    """Uniform interior times j/(n+1), j = 1..n."""
    return np.arange(1, n + 1, dtype=np.float64) / (n + 1)


def baseline_predict(kind, first: np.ndarray, last: np.ndarray, n: int) -> np.ndarray:
    """``n`` frames estimated from ``first`` and ``last``; frame axis is prepended."""
    kind = BaselineKind(kind)
    first = np.asarray(first, dtype=np.float64)
    last = np.asarray(last, dtype=np.float64)
    if first.shape != last.shape:
        raise ShapeError(f"first/last shapes differ: {first.shape} vs {last.shape}")
    if kind is BaselineKind.FFR:
        return np.repeat(first[None], n, axis=0)
    if kind is BaselineKind.LFR:
        return np.repeat(last[None], n, axis=0)
    t = time_grid(n).reshape((n,) + (1,) * first.ndim)
    return (1.0 - t) * first[None] + t * last[None]


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    d = y_true - y_pred
    return float(np.mean(d * d))


def psnr(mse_value: float) -> float:
    """10*log10(255**2 / mse); raises for mse <= 0."""
    if not mse_value > 0:
        raise ValueError(f"PSNR undefined for mse={mse_value}")
    return 10.0 * math.log10(PEAK * PEAK / mse_value)


def psnr_capped(mse_value: float, cap: float = PSNR_CAP) -> float:
    return cap if mse_value <= 0 else min(psnr(mse_value), cap)


def rescale_mse(mse_pixel: float, scale: str) -> float:
    """Report an MSE measured on [0, 255] on the requested scale.

    ``"normalized"`` divides by 255**2, i.e. the MSE of images in [0, 1].
    """
    if scale == "pixel":
        return mse_pixel
    if scale == "normalized":
        return mse_pixel / (PEAK * PEAK)
    raise ValueError(f"unknown MSE scale {scale!r}")


@dataclass
class MetricsReport:
    split: str
    n: int
    mse: float
    psnr: float
    per_sample: np.ndarray | None = None

    def row(self) -> tuple:
        return (self.split, self.n, f"{self.mse:.10g}", f"{self.psnr:.6f}")


def report_from_samples(split: str, per_sample_mse: Sequence[float], scale: str = "pixel",
                        cap: float = PSNR_CAP) -> MetricsReport:
    """Mean of per-sample MSEs (fixed order) and the PSNR of that mean."""
    per = np.asarray(per_sample_mse, dtype=np.float64)
    if per.size == 0:
        raise ValueError(f"split {split!r} is empty")
    value = rescale_mse(float(math.fsum(per)) / per.size, scale)
    return MetricsReport(split, int(per.size), value, psnr_capped(value, cap), per)


def write_metrics_csv(path, reports: Iterable[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for r in reports:
            writer.writerow(r.row())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_baselines(samples, kinds: Sequence = tuple(BaselineKind), split: str = "test",
                       scale: str = "pixel") -> list[MetricsReport]:
    """Per-kind mean MSE/PSNR over ``samples`` (objects with ``x_f``, ``x_i``, ``x_l`` in [0, 255])."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    reports = []
    for kind in kinds:
        kind = BaselineKind(kind)
        per = [mse(s.x_i, baseline_predict(kind, s.x_f, s.x_l, s.x_i.shape[0])) for s in samples]
        reports.append(report_from_samples(f"{split}:{kind.value}", per, scale))
    return reports
