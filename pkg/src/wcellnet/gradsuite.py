"""Finite-difference checks over every differentiable op, the losses and a full W-Cell-Net-4 graph."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .gradcheck import GradCheckResult, check_gradients
from .losses import LossConfig, build_extractor, dssim, loss_terms, perceptual_loss, pixel_loss, weight_decay
from .model import ModelConfig, WCellNet


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _distinct(rng, shape):
    # a random permutation of spread-out values keeps pooling ties far apart
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) / n * 4.0 - 2.0) + rng.uniform(-1e-3, 1e-3, shape)


def _projected(rng, fn):
    """Wrap a tensor-valued ``fn`` into a scalar via a fixed random projection."""
    cache = {}

    def scalar():
        out = fn()
        if "r" not in cache:
            cache["r"] = rng.normal(size=out.shape)
        return (out * Tensor(cache["r"], dtype=out.data.dtype)).sum()

    return scalar


def op_cases(seed: int = 0) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    rng = np.random.default_rng(seed)

    def T(a, name):
        return Tensor(np.asarray(a, dtype=np.float32), name=name)

    cases = {}
    x = T(rng.normal(size=(2, 3, 6, 6)), "x")
    w = T(rng.normal(size=(4, 3, 3, 3)) * 0.4, "w")
    b = T(rng.normal(size=4), "b")
    cases["conv2d"] = (_projected(rng, lambda: ad.conv2d(x, w, b)), [x, w, b])
    for k in (2, 3):
        xt = T(rng.normal(size=(2, 3, 4, 4)), "x")
        wt = T(rng.normal(size=(3, 2, k, k)) * 0.4, "w")
        bt = T(rng.normal(size=2), "b")
        cases[f"conv_transpose2d_k{k}"] = (_projected(rng, lambda xt=xt, wt=wt, bt=bt: ad.conv_transpose2d(xt, wt, bt)),
                                           [xt, wt, bt])
    xp = T(_distinct(rng, (2, 3, 8, 8)), "x")
    cases["maxpool2d"] = (_projected(rng, lambda: ad.maxpool2d(xp)), [xp])
    xb = T(rng.normal(size=(3, 2, 4, 4)) * 2 + 1, "x")
    gam = T(rng.uniform(0.5, 1.5, 2), "gamma")
    bet = T(rng.normal(size=2), "beta")
    for mode in ("train", "eval"):
        state = ad.BatchNormState(2)
        state.running_mean[:] = rng.normal(size=2)
        state.running_var[:] = rng.uniform(0.5, 2.0, 2)
        cases[f"batch_norm_{mode}"] = (_projected(rng, lambda mode=mode, state=state: ad.batch_norm(xb, gam, bet, mode, state)),
                                       [xb, gam, bet])
    xr = T(_away_from_zero(rng, (2, 3, 5, 5)), "x")
    cases["relu"] = (_projected(rng, lambda: ad.relu(xr)), [xr])
    xa = T(_away_from_zero(rng, (4, 5)), "x")
    cases["abs"] = (_projected(rng, lambda: ad.absolute(xa)), [xa])
    xh = T(rng.normal(size=(2, 3, 4, 4)), "x")
    cases["tanh"] = (_projected(rng, lambda: ad.tanh(xh)), [xh])
    p1, p2, p3 = (T(rng.normal(size=(2, c, 3, 3)), f"part{c}") for c in (1, 2, 3))
    cases["concat_channels"] = (_projected(rng, lambda: ad.concat_channels([p1, p2, p3])), [p1, p2, p3])
    cases["reverse_channels"] = (_projected(rng, lambda: ad.reverse_channels(p3)), [p3])
    cases["slice_channels"] = (_projected(rng, lambda: ad.slice_channels(p3, 1, 3)), [p3])
    cases["upsample_nearest2x"] = (_projected(rng, lambda: ad.upsample_nearest2x(p2)), [p2])
    u = T(rng.normal(size=(3, 4)), "u")
    v = T(rng.uniform(0.5, 2.0, (1, 4)), "v")
    cases["add_sub_mul_div"] = (_projected(rng, lambda: (u + v) * u - u / v), [u, v])
    cases["power"] = (_projected(rng, lambda: v ** 1.5), [v])
    cases["sum_mean_reshape"] = (lambda: (u.sum(axis=0) * u.mean(axis=1, keepdims=True).reshape(3, 1)).sum(), [u])

    yt = T(rng.uniform(-1, 1, (2, 2, 6, 6)), "y_true")
    yp = T(rng.uniform(-1, 1, (2, 2, 6, 6)), "y_pred")
    yp1 = T(yt.data + _away_from_zero(rng, yt.shape, 0.05) * 0.5, "y_pred")
    cases["pixel_loss_L2"] = (lambda: pixel_loss(yt, yp, 2), [yp])
    cases["pixel_loss_L1"] = (lambda: pixel_loss(yt, yp1, 1), [yp1])
    st = T(rng.uniform(-1, 1, (1, 2, 12, 12)), "y_true")
    sp = T(np.clip(st.data + rng.normal(scale=0.3, size=st.shape), -1, 1), "y_pred")
    for conv in ("paper", "standard"):
        cases[f"dssim_{conv}"] = (lambda conv=conv: dssim(st, sp, conv), [sp])
    ext = build_extractor(LossConfig(lambda1=1.0, perceptual_extractor="random_conv", extractor_seed=seed))
    ft = T(rng.uniform(-1, 1, (1, 1, 16, 16)), "y_true")
    fp = T(rng.uniform(-1, 1, (1, 1, 16, 16)), "y_pred")
    cases["perceptual_loss"] = (lambda: perceptual_loss(ft, fp, ext), [fp])
    store = ad.ParamStore()
    store.add("a.weight", rng.normal(size=(2, 3, 3, 3)))
    store.add("a.bias", rng.normal(size=2))
    cases["weight_decay"] = (lambda: weight_decay(store), list(store))
    return cases


def network_case(seed: int = 0):
    """W-Cell-Net-4 (IF=3, 16x16, batch 2) under the full combined loss."""
    rng = np.random.default_rng(seed)
    net = WCellNet(ModelConfig(k=4, IF=3, input_h=16, input_w=16), seed=seed)
    # randomize the zero-initialized biases and unit gammas so their gradients are generic
    for name, p in net.store.items():
        if not name.endswith(".weight"):
            p.data[...] = p.data + rng.normal(scale=0.1, size=p.shape).astype(np.float32)
    x_f = rng.uniform(-1, 1, (2, 1, 16, 16)).astype(np.float32)
    x_l = rng.uniform(-1, 1, (2, 1, 16, 16)).astype(np.float32)
    y = rng.uniform(-0.9, 0.9, (2, 3, 16, 16)).astype(np.float32)
    config = LossConfig(reconstruction="L2", lambda1=1e-4, lambda2=1e-5,
                        perceptual_extractor="random_conv", extractor_seed=seed)
    ext = build_extractor(config)

    def fn():
        pred = net.forward(x_f, x_l, "train")
        return loss_terms(y, pred, net.store, config, ext)["total"]

    return fn, net.store.trainable()


def run_suite(seed: int = 0, eps: float = 1e-3, rtol: float = 1e-3, atol: float = 1e-4,
              network_eps: float = 1e-5, network_entries: int = 2,
              op_entries: int = 48) -> list[tuple[str, list[GradCheckResult]]]:
    """Check every op case, then the full network.

    The network uses a smaller step than the single ops: with eps=1e-3 a
    perturbation of an early weight moves many downstream activations across
    ReLU and max-pool switch points, which corrupts the difference quotient.
    The float64 evaluation keeps the smaller step well above round-off.
    """
    out = []
    for name, (fn, tensors) in op_cases(seed).items():
        out.append((name, check_gradients(fn, tensors, eps, rtol, atol, max_entries=op_entries,
                                          name=name, seed=seed)))
    fn, tensors = network_case(seed)
    out.append(("wcellnet4_combined_loss",
                check_gradients(fn, tensors, network_eps, rtol, atol, max_entries=network_entries,
                                seed=seed, name="wcellnet4")))
    return out
