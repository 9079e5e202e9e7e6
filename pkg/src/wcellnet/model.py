"""W-Cell-Net-k: two convolutional encoders feeding one upconvolutional decoder.

The first encoder sees the first frame, the second the last frame. Each
decoder block consumes ``[enc1 skip, decoder state, reverse(enc2 skip)]``
concatenated along channels; a 3x3 head with Tanh emits the IF frames.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import records
from .autodiff import ParamStore, Tensor
from .errors import ConfigError, FormatError, ShapeError
from .layers import ConvBlock, UpConvBlock, add_conv

UPSAMPLE_CODES = {("transpose", 2): 0, ("transpose", 3): 1, ("nearest", 3): 2}
FLAG_OPTIMIZER = 1
FLAG_HEAD_1X1 = 8


@dataclass(frozen=True)
class ModelConfig:
    k: int = 16
    IF: int = 3
    B: int = 4
    input_h: int = 128
    input_w: int = 128
    upsample_mode: str = "transpose"
    upconv_kernel: int = 3
    head_kernel: int = 3

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not 1 <= self.IF <= 7:
            raise ConfigError(f"IF must be in 1..7, got {self.IF}")
        if self.B != 4:
            raise ConfigError("only B=4 blocks are supported")
        step = 2 ** self.B
        if self.input_h % step or self.input_w % step or self.input_h <= 0 or self.input_w <= 0:
            raise ConfigError(f"input size {self.input_h}x{self.input_w} not divisible by {step}")
        if self.upsample_mode == "nearest":
            object.__setattr__(self, "upconv_kernel", 3)
        if (self.upsample_mode, self.upconv_kernel) not in UPSAMPLE_CODES:
            raise ConfigError(f"unsupported upsampling {self.upsample_mode}/{self.upconv_kernel}")
        if self.head_kernel not in (1, 3):
            raise ConfigError("head_kernel must be 1 or 3")

    def flags(self) -> int:
        code = UPSAMPLE_CODES[(self.upsample_mode, self.upconv_kernel)]
        return (code << 1) | (FLAG_HEAD_1X1 if self.head_kernel == 1 else 0)

    @classmethod
    def from_header(cls, flags: int, fields) -> "ModelConfig":
        code = (flags >> 1) & 3
        by_code = {v: key for key, v in UPSAMPLE_CODES.items()}
        if code not in by_code:
            raise FormatError(f"unknown upsampling code {code}")
        mode, kernel = by_code[code]
        k, IF, B, h, w = fields
        try:
            return cls(k=k, IF=IF, B=B, input_h=h, input_w=w, upsample_mode=mode,
                       upconv_kernel=kernel, head_kernel=1 if flags & FLAG_HEAD_1X1 else 3)
        except ConfigError as exc:
            raise FormatError(f"invalid model config in header: {exc}") from None


class WCellNet:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        k = config.k
        widths = [k, 2 * k, 4 * k, 8 * k]
        self.encoders = []
        for e in (1, 2):
            blocks, c_in = [], 1
            for b, w in enumerate(widths, start=1):
                blocks.append(ConvBlock(f"enc{e}.block{b}", c_in, w))
                c_in = w
            self.encoders.append(blocks)
        # decoder block b outputs half the width of the skip level above it
        self.decoder = []
        c_in = 2 * widths[3]
        for b, c_out in enumerate(reversed(widths), start=1):
            self.decoder.append(UpConvBlock(f"dec.block{b}", c_in, c_out, config.upsample_mode, config.upconv_kernel))
            if b < 4:
                c_in = 2 * widths[3 - b] + c_out
        self.head_in = widths[0]
        self.store = init_params(self, seed)

    # ------------------------------------------------------------ forward
    def encode(self, which: int, x: Tensor, mode: str) -> list[Tensor]:
        lookup = []
        for block in self.encoders[which]:
            x = ad.maxpool2d(block(self.store, x, mode))
            lookup.append(x)
        return lookup

    def forward(self, x_f, x_l, mode: str = "train", return_lookups: bool = False):
        """Interpolate IF frames between ``x_f`` and ``x_l``, both (m, 1, h, w) in [-1, 1]."""
        x_f, x_l = ad._wrap(x_f), ad._wrap(x_l)
        if x_f.shape != x_l.shape:
            raise ShapeError(f"first/last frame shapes differ: {x_f.shape} vs {x_l.shape}")
        if x_f.ndim != 4 or x_f.shape[1] != 1:
            raise ShapeError(f"frames must be (m, 1, h, w), got {x_f.shape}")
        if x_f.shape[2] % 16 or x_f.shape[3] % 16:
            raise ShapeError(f"spatial dims {x_f.shape[2:]} not divisible by 16")
        look1 = self.encode(0, x_f, mode)
        look2 = self.encode(1, x_l, mode)
        x = self.decoder[0](self.store, ad.concat_channels([look1[3], ad.reverse_channels(look2[3])]), mode)
        for b in range(1, 4):
            skip = 3 - b
            x = ad.concat_channels([look1[skip], x, ad.reverse_channels(look2[skip])])
            x = self.decoder[b](self.store, x, mode)
        out = ad.tanh(ad.conv2d(x, self.store["head.weight"], self.store["head.bias"]))
        if return_lookups:
            return out, look1, look2
        return out

    __call__ = forward

    def predict(self, x_f: np.ndarray, x_l: np.ndarray, batch_size: int = 16) -> np.ndarray:
        """Eval-mode forward without graph recording; arrays in, array out."""
        outs = []
        with ad.no_grad():
            for i in range(0, len(x_f), batch_size):
                outs.append(self.forward(x_f[i:i + batch_size], x_l[i:i + batch_size], "eval").data)
        return np.concatenate(outs, axis=0)

    # ------------------------------------------------------------ bookkeeping
    def parameters(self) -> list[Tensor]:
        return self.store.trainable()

    def zero_grad(self) -> None:
        self.store.zero_grad()


def init_params(net: WCellNet, seed: int) -> ParamStore:
    """Deterministic parameters for ``net``; identical seeds give identical bits."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for blocks in net.encoders:
        for block in blocks:
            block.init(store, rng)
    for block in net.decoder:
        block.init(store, rng)
    add_conv(store, rng, "head", net.head_in, net.config.IF, net.config.head_kernel, "glorot")
    return store


def count_parameters(net: WCellNet) -> int:
    return net.store.count()


def closed_form_count(config: ModelConfig) -> int:
    """Parameter count from the block formulas, without building the net."""
    k = config.k
    widths = [k, 2 * k, 4 * k, 8 * k]
    total, c_in = 0, 1
    for w in widths:
        total += ConvBlock("", c_in, w).param_count()
        c_in = w
    total *= 2
    c_in = 2 * widths[3]
    for b, c_out in enumerate(reversed(widths), start=1):
        total += UpConvBlock("", c_in, c_out, config.upsample_mode, config.upconv_kernel).param_count()
        if b < 4:
            c_in = 2 * widths[3 - b] + c_out
    hk = config.head_kernel
    return total + hk * hk * widths[0] * config.IF + config.IF


# ---------------------------------------------------------------- checkpoints


def checkpoint_bytes(net: WCellNet, optimizer=None) -> bytes:
    cfg = net.config
    recs: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, p in net.store.items():
        recs[name] = p.data
    for name, arr in net.store.buffers():
        recs[name] = arr
    flags = cfg.flags()
    if optimizer is not None:
        flags |= FLAG_OPTIMIZER
        recs.update(optimizer.state_records())
    rf = records.RecordFile(flags=flags, config=(cfg.k, cfg.IF, cfg.B, cfg.input_h, cfg.input_w), records=recs)
    return records.encode(rf)


def save_checkpoint(net: WCellNet, path, optimizer=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(net, optimizer))


def load_checkpoint(path) -> WCellNet:
    """Rebuild a net from ``path``.

    Optimizer records, if present, are left in ``net.optimizer_records`` for
    the trainer to pick up.
    """
    rf = records.read(path)
    config = ModelConfig.from_header(rf.flags, rf.config)
    net = WCellNet(config, seed=0)
    recs = OrderedDict(rf.records)
    buffers = {name: arr for name, arr in net.store.buffers()}
    optimizer_records = OrderedDict()
    for name, arr in recs.items():
        if name in net.store:
            target = net.store[name].data
        elif name in buffers:
            target = buffers[name]
        elif name.startswith("adam.") and rf.flags & FLAG_OPTIMIZER:
            optimizer_records[name] = arr
            continue
        else:
            raise FormatError(f"unknown parameter name {name!r}")
        if target.shape != arr.shape:
            raise FormatError(f"{name}: shape {arr.shape} does not match model {target.shape}")
        target[...] = arr
    expected = set(net.store.params) | set(buffers)
    missing = expected - set(recs)
    if missing:
        raise FormatError(f"checkpoint missing {len(missing)} entries, e.g. {sorted(missing)[0]!r}")
    net.optimizer_records = optimizer_records
    return net


def config_dict(config: ModelConfig) -> dict:
    return asdict(config)
