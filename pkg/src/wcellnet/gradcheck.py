"""Central finite-difference gradient checking.

Analytic gradients are taken from a float32 backward pass. The finite
differences are evaluated by re-running the same closure with every checked
tensor promoted to float64, so rounding in the loss does not swamp the
difference quotient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad


@dataclass
class GradCheckResult:
    name: str
    checked: int
    max_abs_err: float
    failures: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def check_gradients(
    fn: Callable[[], ad.Tensor],
    tensors: Sequence[ad.Tensor],
    eps: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-4,
    max_entries: int | None = None,
    seed: int = 0,
    name: str = "",
) -> list[GradCheckResult]:
    """Compare analytic and numeric gradients of ``fn()`` w.r.t. ``tensors``.

    ``fn`` must rebuild the graph from the current ``.data`` of the tensors on
    every call. An entry passes when ``|analytic - numeric| <= max(rtol*|numeric|, atol)``.
    ``max_entries`` limits how many (randomly chosen) entries per tensor are
    perturbed.
    """
    rng = np.random.default_rng(seed)
    originals = [t.data.copy() for t in tensors]
    saved_flags = [(t.requires_grad, t.grad) for t in tensors]
    try:
        for t in tensors:
            t.requires_grad = True
            t.grad = np.zeros_like(t.data)
        loss = fn()
        ad.backward(loss)
        analytic = [t.grad.astype(np.float64) for t in tensors]

        for t, orig in zip(tensors, originals):
            t.data = orig.astype(np.float64)
        results = []
        with ad.no_grad():
            for i, t in enumerate(tensors):
                n = t.data.size
                idx = np.arange(n)
                if max_entries is not None and n > max_entries:
                    idx = np.sort(rng.choice(n, size=max_entries, replace=False))
                flat = t.data.reshape(-1)
                res = GradCheckResult(name=t.name or f"{name}[{i}]", checked=len(idx), max_abs_err=0.0)
                for j in idx:
                    keep = flat[j]
                    flat[j] = keep + eps
                    up = fn().item()
                    flat[j] = keep - eps
                    down = fn().item()
                    flat[j] = keep
                    numeric = (up - down) / (2 * eps)
                    a = analytic[i].reshape(-1)[j]
                    err = abs(a - numeric)
                    res.max_abs_err = max(res.max_abs_err, err)
                    if err > max(rtol * abs(numeric), atol):
                        res.failures.append((int(j), float(a), float(numeric)))
                results.append(res)
        return results
    finally:
        for t, orig, (flag, grad) in zip(tensors, originals, saved_flags):
            t.data = orig
            t.requires_grad = flag
            t.grad = grad
