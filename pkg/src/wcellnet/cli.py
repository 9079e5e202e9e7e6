"""Command-line entry point: ``wcellnet <command> [flags]``.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (
    load_dataset,
    read_pgm,
    save_stack,
    split_dataset,
    stack_bytes,
    synth_generate,
    to_model_scale,
    to_pixel_scale,
    write_pgm,
)
from .errors import ConfigError, FormatError, GraphError, ShapeError
from .metrics import MSE_SCALES, BaselineKind, evaluate_baselines, write_metrics_csv
from .model import ModelConfig, WCellNet, closed_form_count, count_parameters, load_checkpoint
from .runconfig import RunConfig, load_run_config

log = logging.getLogger("wcellnet")

SPLITS = ("train", "val", "test")


class UsageError(Exception):
    pass


def _cell_range(text: str) -> tuple[int, int]:
    try:
        if "-" in text:
            lo, hi = (int(t) for t in text.split("-", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO-HI, got {text!r}") from None
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"invalid cell range {text!r}")
    return lo, hi


def _emit_metrics(reports, out) -> None:
    if out:
        write_metrics_csv(out, reports)
    print("split,n,mse,psnr")
    for r in reports:
        print(",".join(str(v) for v in r.row()))


def _split_samples(samples, which: str, seed: int):
    train, val, test = split_dataset(samples, seed=seed)
    return {"train": train, "val": val, "test": test}[which]


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    if args.height % 16 or args.width % 16:
        raise UsageError(f"--height/--width must be multiples of 16, got {args.height}x{args.width}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stacks = synth_generate(args.videos, args.frames, args.height, args.width, args.cells, args.seed,
                            motion=args.motion)
    for i, stack in enumerate(stacks):
        path = out / f"video_{i:04d}.cvip"
        save_stack(stack, path)
        n, h, w = stack.shape
        print(f"{path}\t{n}\t{h}\t{w}\t{len(stack_bytes(stack))}")
    return 0


def _run_config(args) -> RunConfig:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    cfg.update({
        "k": args.k, "if": args.IF, "iterations": args.iters, "lr": args.lr, "batch_size": args.batch,
        "seed": args.seed, "out_dir": args.out_dir,
        "data": ",".join(args.data) if args.data else None,
    })
    return cfg


def cmd_train(args) -> int:
    from .training import train

    cfg = _run_config(args)
    data = cfg.get("data")
    if not data:
        raise UsageError("no training data: pass --data or set data= in the config")
    out_dir = cfg.get("out_dir") or "runs/latest"
    IF = cfg.get("if", 3)
    samples = load_dataset(data, IF)
    if not samples:
        raise ConfigError("dataset produced no samples")
    h, w = samples[0].frames.shape[1:]
    model_cfg = cfg.model_config(IF=IF, input_h=h, input_w=w)
    train_cfg = cfg.train_config()
    split_seed = cfg.get("split_seed")
    train_set, val_set, _ = split_dataset(samples, seed=train_cfg.seed if split_seed is None else split_seed)
    log.info("training on %d samples (%d val), model %s", len(train_set), len(val_set), model_cfg)
    result = train(model_cfg, cfg.loss_config(), train_cfg, train_set, out_dir=out_dir, val=val_set)
    print(f"{Path(out_dir) / 'final.wcnc'}\t{len(result.log)} iterations")
    return 0


def cmd_eval(args) -> int:
    from .training import evaluate

    net = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data, net.config.IF)
    which = SPLITS if args.split == "all" else (args.split,)
    reports = [evaluate(net, _split_samples(samples, s, args.seed), split=s, scale=args.mse_scale) for s in which]
    _emit_metrics(reports, args.out)
    return 0


def cmd_baseline(args) -> int:
    samples = load_dataset(args.data, args.IF)
    if args.split != "all":
        samples = _split_samples(samples, args.split, args.seed)
    kinds = [BaselineKind(k.strip().upper()) for k in args.kinds.split(",") if k.strip()]
    _emit_metrics(evaluate_baselines(samples, kinds, split=args.split, scale=args.mse_scale), args.out)
    return 0


def cmd_interpolate(args) -> int:
    net = load_checkpoint(args.checkpoint)
    first, last = read_pgm(args.first), read_pgm(args.last)
    if first.shape != last.shape:
        raise ShapeError(f"first/last frames differ in size: {first.shape} vs {last.shape}")
    x_f = to_model_scale(first)[None, None]
    x_l = to_model_scale(last)[None, None]
    frames = to_pixel_scale(net.predict(x_f, x_l)[0])
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    width = max(2, len(str(net.config.IF)))
    for i, frame in enumerate(frames, start=1):
        path = f"{prefix}_{i:0{width}d}.pgm"
        write_pgm(path, np.clip(np.rint(frame), 0, 255).astype(np.uint8))
        print(path)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    failed = 0
    for name, results in run_suite(args.seed):
        ok = all(r.ok for r in results)
        worst = max((r.max_abs_err for r in results), default=0.0)
        print(f"{'PASS' if ok else 'FAIL'}\t{name}\tmax_abs_err={worst:.3g}")
        if not ok:
            failed += 1
            for r in results:
                for idx, a, n in r.failures[:3]:
                    print(f"\t{r.name}[{idx}] analytic={a:.6g} numeric={n:.6g}")
    return 1 if failed else 0


def cmd_count_params(args) -> int:
    cfg = ModelConfig(k=args.k, IF=args.IF, input_h=16, input_w=16, upsample_mode=args.upsample_mode,
                      upconv_kernel=args.upconv_kernel, head_kernel=args.head_kernel)
    n = count_parameters(WCellNet(cfg)) if args.build else closed_form_count(cfg)
    print(n)
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wcellnet", description="W-Cell-Net frame interpolation engine")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write synthetic CVIP stacks")
    s.add_argument("--videos", type=int, default=2)
    s.add_argument("--frames", type=int, default=40)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--cells", type=_cell_range, default=(1, 6), help="N or LO-HI cells per video")
    s.add_argument("--motion", choices=("brownian", "linear"), default="brownian")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="key=value run config file")
    t.add_argument("--data", nargs="+", help="CVIP files, PGM directories or directories of .cvip files")
    t.add_argument("--k", type=int)
    t.add_argument("--if", dest="IF", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", nargs="+", required=True)
    e.add_argument("--split", choices=SPLITS + ("all",), default="test")
    e.add_argument("--seed", type=int, default=0, help="split seed used at training time")
    e.add_argument("--mse-scale", choices=MSE_SCALES, default="pixel")
    e.add_argument("--out", help="metrics CSV path")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="evaluate FFR/LFR/WF baselines")
    b.add_argument("--data", nargs="+", required=True)
    b.add_argument("--if", dest="IF", type=int, required=True)
    b.add_argument("--kinds", default="FFR,LFR,WF")
    b.add_argument("--split", choices=SPLITS + ("all",), default="test")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--mse-scale", choices=MSE_SCALES, default="pixel")
    b.add_argument("--out", help="metrics CSV path")
    b.set_defaults(func=cmd_baseline)

    i = sub.add_parser("interpolate", help="generate intermediate frames between two PGM images")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--first", required=True)
    i.add_argument("--last", required=True)
    i.add_argument("--out-prefix", required=True)
    i.set_defaults(func=cmd_interpolate)

    g = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    c = sub.add_parser("count-params", help="print the parameter count of W-Cell-Net-k")
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--if", dest="IF", type=int, required=True)
    c.add_argument("--upsample-mode", choices=("transpose", "nearest"), default="transpose")
    c.add_argument("--upconv-kernel", type=int, choices=(2, 3), default=3)
    c.add_argument("--head-kernel", type=int, choices=(1, 3), default=3)
    c.add_argument("--build", action="store_true", help="instantiate the net instead of using the closed form")
    c.set_defaults(func=cmd_count_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ConfigError, FormatError, ShapeError, GraphError, ValueError, OSError) as exc:
        print(f"wcellnet {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
