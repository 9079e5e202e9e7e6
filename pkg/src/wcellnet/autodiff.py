"""Dense float tensors with reverse-mode automatic differentiation.

Every operation records a node holding its parents and a closure that maps
the output gradient to parent gradients. ``backward`` replays the recorded
nodes in reverse creation order, which is a valid reverse topological order
because a node's inputs always exist before the node itself.
"""

from __future__ import annotations

import contextlib
import itertools
from collections import OrderedDict
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import GraphError, ShapeError

MAX_RANK = 5
BN_EPS = 1e-5
BN_MOMENTUM = 0.99

_seq = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        dtype = np.float64 if arr.dtype == np.float64 else np.float32
    return np.ascontiguousarray(arr, dtype=dtype)


class _Node:
    __slots__ = ("parents", "backward")

    def __init__(self, parents: tuple, backward: Callable):
        self.parents = parents
        self.backward = backward


class Tensor:
    """An immutable float array, optionally a named trainable variable.

    Float64 input is kept as float64 so the gradient checker can evaluate the
    same graph at higher precision; everything else is stored as float32.
    """

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = _as_array(data, dtype)
        if self.data.ndim > MAX_RANK:
            raise ShapeError(f"rank {self.data.ndim} exceeds maximum rank {MAX_RANK}")
        self.requires_grad = requires_grad
        self.name = name
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._node: _Node | None = None
        self._seq = next(_seq)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(tuple(parents), backward)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every trainable leaf."""
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        if t._node is not None:
            stack.extend(p for p in t._node.parents if p.requires_grad)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._node is None:
            t.grad += g.astype(t.grad.dtype, copy=False)
            continue
        for parent, pg in zip(t._node.parents, t._node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ---------------------------------------------------------------- elementwise


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def power(x: Tensor, exponent: float) -> Tensor:
    x = _wrap(x)
    e = float(exponent)
    return _make(x.data ** e, (x,), lambda g: (g * e * x.data ** (e - 1.0),))


def absolute(x: Tensor) -> Tensor:
    x = _wrap(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------- reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.data.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    x = _wrap(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


# ---------------------------------------------------------------- channel ops


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate (m, c_i, h, w) tensors along the channel axis, in order."""
    parts = [_wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    ref = parts[0].shape
    for p in parts:
        if p.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"cannot concatenate {p.shape} with {ref}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, bw)


def reverse_channels(x: Tensor) -> Tensor:
    """Flip feature maps along the channel axis."""
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"reverse_channels expects rank 4, got {x.shape}")
    return _make(np.ascontiguousarray(x.data[:, ::-1]), (x,),
                 lambda g: (np.ascontiguousarray(g[:, ::-1]),))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    x = _wrap(x)

    def bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[:, start:stop]), (x,), bw)


# ---------------------------------------------------------------- convolution


def _check_conv_input(x: Tensor, c_in: int) -> None:
    if x.ndim != 4:
        raise ShapeError(f"expected (m, c, h, w) input, got {x.shape}")
    if x.shape[1] != c_in:
        raise ShapeError(f"input has {x.shape[1]} channels, weight expects {c_in}")


def _im2col(xp: np.ndarray, k: int, out_h: int, out_w: int) -> np.ndarray:
    """Gather k*k shifted views of padded ``xp`` into a (c*k*k, m*out_h*out_w) matrix."""
    m, c = xp.shape[:2]
    cols = np.empty((c, k, k, m, out_h, out_w), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for a in range(k):
        for b in range(k):
            cols[:, a, b] = xt[:, :, a:a + out_h, b:b + out_w]
    return cols.reshape(c * k * k, m * out_h * out_w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, padding="same") -> Tensor:
    """Stride-1 2D cross-correlation with zero padding.

    ``padding="same"`` pads (k-1)/2 on each border so an odd kernel keeps the
    spatial size; an integer pads that many pixels.
    """
    x, weight = _wrap(x), _wrap(weight)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"weight must be (c_out, c_in, k, k), got {weight.shape}")
    _check_conv_input(x, weight.shape[1])
    c_out, c_in, k, _ = weight.shape
    pad = (k - 1) // 2 if padding == "same" else int(padding)
    if padding == "same" and k % 2 == 0:
        raise ShapeError("same padding needs an odd kernel")
    m, _, h, w = x.shape
    out_h, out_w = h + 2 * pad - k + 1, w + 2 * pad - k + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"input {x.shape} smaller than kernel {weight.shape}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, k, out_h, out_w)
    wmat = weight.data.reshape(c_out, -1)
    out = (wmat @ cols).reshape(c_out, m, out_h, out_w).transpose(1, 0, 2, 3)
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} does not match {c_out} outputs")
        out = out + bias.data[:, None, None]
        parents.append(bias)
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = g.transpose(1, 0, 2, 3).reshape(c_out, -1)
        gw = (gmat @ cols.T).reshape(weight.shape)
        gcols = (wmat.T @ gmat).reshape(c_in, k, k, m, out_h, out_w)
        gxp = np.zeros((c_in, m) + xp.shape[2:], dtype=gcols.dtype)
        for a in range(k):
            for b in range(k):
                gxp[:, :, a:a + out_h, b:b + out_w] += gcols[:, a, b]
        gx = gxp[:, :, pad:pad + h, pad:pad + w].transpose(1, 0, 2, 3)
        grads = [np.ascontiguousarray(gx), gw.astype(weight.data.dtype, copy=False)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution producing exactly ``stride`` times the input size.

    ``weight`` is (c_in, c_out, k, k). With k == stride the scatter tiles the
    output exactly; a larger kernel overlaps and the result is cropped the
    way TensorFlow's "same" padding does (leading crop of (k - stride) // 2).
    """
    x, weight = _wrap(x), _wrap(weight)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"weight must be (c_in, c_out, k, k), got {weight.shape}")
    _check_conv_input(x, weight.shape[0])
    k, s = weight.shape[2], stride
    if k < s:
        raise ShapeError(f"kernel {k} smaller than stride {s}")
    m, _, h, w = x.shape
    c_out = weight.shape[1]
    full_h, full_w = s * (h - 1) + k, s * (w - 1) + k
    crop = (k - s) // 2
    # (m, h, w, c_out, k, k)
    taps = np.tensordot(x.data, weight.data, axes=([1], [0]))
    full = np.zeros((m, c_out, full_h, full_w), dtype=taps.dtype)
    for a in range(k):
        for b in range(k):
            full[:, :, a:a + s * h:s, b:b + s * w:s] += taps[..., a, b].transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(full[:, :, crop:crop + s * h, crop:crop + s * w])
    parents = [x, weight]
    if bias is not None:
        bias = _wrap(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} does not match {c_out} outputs")
        out += bias.data[:, None, None]
        parents.append(bias)

    def bw(g):
        gfull = np.zeros((m, c_out, full_h, full_w), dtype=g.dtype)
        gfull[:, :, crop:crop + s * h, crop:crop + s * w] = g
        gathered = np.empty((m, c_out, k, k, h, w), dtype=g.dtype)
        for a in range(k):
            for b in range(k):
                gathered[:, :, a, b] = gfull[:, :, a:a + s * h:s, b:b + s * w:s]
        gx = np.tensordot(gathered, weight.data, axes=([1, 2, 3], [1, 2, 3]))
        gw = np.tensordot(x.data, gathered, axes=([0, 2, 3], [0, 4, 5]))
        grads = [np.ascontiguousarray(gx.transpose(0, 3, 1, 2)), gw.astype(weight.data.dtype, copy=False)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make(out, parents, bw)


def upsample_nearest2x(x: Tensor) -> Tensor:
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"expected rank 4, got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    m, c, h, w = x.shape
    return _make(out, (x,), lambda g: (g.reshape(m, c, h, 2, w, 2).sum(axis=(3, 5)),))


def maxpool2d(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; ties go to the first element in row-major order."""
    x = _wrap(x)
    if x.ndim != 4:
        raise ShapeError(f"expected rank 4, got {x.shape}")
    m, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(m, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(m, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        routed = np.zeros((m, c, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
        return (routed.reshape(m, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(m, c, h, w),)

    return _make(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------- batch norm


class BatchNormState:
    """Running per-channel statistics; mutated only in train mode."""

    def __init__(self, channels: int):
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, mode: str, state: BatchNormState,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization over (m, h, w).

    Train mode uses batch statistics and folds them into the running stats
    as ``running = momentum * running + (1 - momentum) * batch``.
    """
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    if x.ndim != 4:
        raise ShapeError(f"expected rank 4, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},)")
    g4, b4 = gamma.data[:, None, None], beta.data[:, None, None]
    if mode == "train":
        n = x.shape[0] * x.shape[2] * x.shape[3]
        if n < 2:
            raise ShapeError("train-mode batch norm needs at least 2 values per channel")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[:, None, None]) * invstd[:, None, None]
        with np.errstate(all="ignore"):
            state.running_mean[:] = momentum * state.running_mean + (1 - momentum) * mu
            state.running_var[:] = momentum * state.running_var + (1 - momentum) * var

        def bw(g):
            dxhat = g * g4
            s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            gx = invstd[:, None, None] / n * (n * dxhat - s1 - xhat * s2)
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    elif mode == "eval":
        invstd = (1.0 / np.sqrt(state.running_var + eps)).astype(x.data.dtype)
        xhat = (x.data - state.running_mean[:, None, None]) * invstd[:, None, None]

        def bw(g):
            return g * g4 * invstd[:, None, None], (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return _make((g4 * xhat + b4).astype(x.data.dtype, copy=False), (x, gamma, beta), bw)


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Named trainable tensors plus non-trainable batch-norm buffers.

    Iteration order is registration order, which fixes the layout of
    checkpoints and the order of optimizer updates.
    """

    def __init__(self):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.bn: OrderedDict[str, BatchNormState] = OrderedDict()

    def add(self, name: str, value: np.ndarray, trainable: bool = True) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float32), requires_grad=trainable, name=name)
        self.params[name] = t
        return t

    def add_bn(self, name: str, channels: int) -> BatchNormState:
        if name in self.bn:
            raise KeyError(f"duplicate batch-norm name {name!r}")
        state = BatchNormState(channels)
        self.bn[name] = state
        return state

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.values())

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def trainable(self) -> list[Tensor]:
        return [p for p in self.params.values() if p.requires_grad]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        """Running statistics as flat (name, array) pairs."""
        out = []
        for name, state in self.bn.items():
            out.append((f"{name}.running_mean", state.running_mean))
            out.append((f"{name}.running_var", state.running_var))
        return out

    def count(self) -> int:
        return sum(p.size for p in self.params.values())
