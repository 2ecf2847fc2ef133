"""Command-line entry point: ``vrtkit <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from pathlib import Path

import numpy as np

from ..errors import VrtError
from ..pipeline import (
    MICRO,
    TINY,
    ModelConfig,
    charbonnier_loss,
    forward,
    init_model,
    load_checkpoint,
    named_parameters,
    replace_parameters,
    save_checkpoint,
)
from ..tensor import Tensor, grad_check_many, resize_bilinear
from .config import config_from_text, load_config
from .degrade import DegradationSpec, degrade
from .io import load_sequence, save_sequence
from .records import evaluate, to_csv
from .selftest import run_selftest
from .synthetic import translating_clip
from .train import restore, train_smoke


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _model_config(args, base: dict | None = None) -> ModelConfig:
    overrides = list(args.set or [])
    if args.config:
        return load_config(args.config, overrides)
    text = "".join(f"{k} = {v}\n" for k, v in (base or {}).items())
    return config_from_text(text, overrides)


def _sequences(root: Path) -> list[tuple[str, Path]]:
    """A single sequence, or each subdirectory / .ntf file inside ``root``."""
    if root.is_dir():
        subs = sorted(p for p in root.iterdir() if p.is_dir() or p.suffix.lower() == ".ntf")
        if subs:
            return [(p.stem if p.is_file() else p.name, p) for p in subs]
    return [(root.stem if root.is_file() else root.name, root)]


# ----------------------------------------------------------------- commands

def cmd_degrade(args) -> int:
    spec = DegradationSpec(args.kind, args.scale, args.sigma, args.noise_sigma, args.seed)
    hq = load_sequence(args.input)
    save_sequence(degrade(hq, spec), args.output)
    return 0


def cmd_restore(args) -> int:
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    else:
        model = init_model(_model_config(args))
    lq = load_sequence(args.input)
    start = time.perf_counter()
    out = restore(model, lq)
    elapsed = (time.perf_counter() - start) * 1e3
    save_sequence(out, args.output)
    t, h, w, c = out.shape
    _emit(f"sequence,frames,height,width,channels,runtime_ms\n"
          f"{Path(args.input).name},{t},{h},{w},{c},{elapsed:.3f}\n", args.csv)
    return 0


def cmd_train_smoke(args) -> int:
    cfg = _model_config(args, TINY)
    model = init_model(cfg)
    if args.hq:
        hq = load_sequence(args.hq)
    else:
        s = cfg.upscale
        hq = translating_clip(args.frames, args.size * s, args.size * s, (1.0, 0.5))
    lq = degrade(hq, DegradationSpec("bicubic", cfg.upscale)) if cfg.task == "sr" else hq
    model, losses = train_smoke(model, [(lq, hq)], args.steps, args.lr, args.momentum)
    if args.save:
        save_checkpoint(model, args.save)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss"])
    for i, v in enumerate(losses):
        writer.writerow([i, f"{v:.8f}"])
    _emit(buf.getvalue(), args.out)
    return 0


def cmd_eval(args) -> int:
    lq_seqs = dict(_sequences(Path(args.lq)))
    hq_seqs = _sequences(Path(args.hq))
    if len(hq_seqs) == 1 and len(lq_seqs) == 1:
        pairs = [(hq_seqs[0][0], next(iter(lq_seqs.values())), hq_seqs[0][1])]
    else:
        missing = [name for name, _ in hq_seqs if name not in lq_seqs]
        if missing:
            raise VrtError(f"no restored sequence for {', '.join(missing)}")
        pairs = [(name, lq_seqs[name], path) for name, path in hq_seqs]
    records = []
    for name, lq_path, hq_path in pairs:
        start = time.perf_counter()
        a, b = load_sequence(lq_path), load_sequence(hq_path)
        if a.shape != b.shape:
            ratio = b.shape[1] / a.shape[1]
            if a.shape[0] != b.shape[0] or ratio != b.shape[2] / a.shape[2] or ratio < 1:
                raise VrtError(f"{name}: shapes {a.shape} and {b.shape} are not comparable")
            a = np.clip(resize_bilinear(Tensor(a), ratio).data, 0.0, 1.0)
        rec = evaluate(name, a, b, (time.perf_counter() - start) * 1e3)
        records.append(rec)
    _emit(to_csv(records), args.out)
    return 0


def cmd_grad_check(args) -> int:
    cfg = _model_config(args, MICRO)
    if cfg.dtype != "float64":
        raise VrtError("grad-check needs dtype = float64")
    model = init_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    s = cfg.upscale
    lq = rng.uniform(size=(args.frames, args.size, args.size, cfg.input_channels))
    hq = rng.uniform(size=(args.frames, args.size * s, args.size * s, cfg.out_channels))
    params = list(named_parameters(model))
    names = [n for n, _ in params]

    def loss_fn(tensors):
        m = replace_parameters(model, dict(zip(names, tensors[1:])))
        return charbonnier_loss(forward(m, tensors[0]), Tensor(hq))

    errors = grad_check_many(loss_fn, [Tensor(lq)] + [t for _, t in params])
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["tensor", "max_rel_error", "pass"])
    ok = True
    for name, err in zip(["input"] + names, errors):
        good = err < args.tol
        ok &= good
        writer.writerow([name, f"{err:.3e}", "yes" if good else "no"])
    _emit(buf.getvalue(), args.out)
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    lines: list[str] = []
    ok = run_selftest(lines.append)
    _emit("\n".join(lines) + "\n", args.out)
    return 0 if ok else 1


# ------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrtkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_opts(p):
        p.add_argument("--config", help="flat 'key = value' model config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")

    p = sub.add_parser("degrade", help="synthesize a low-quality sequence")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--kind", choices=["bicubic", "blur", "noise"], default="bicubic")
    p.add_argument("--scale", type=int, default=4)
    p.add_argument("--sigma", type=float, default=1.6)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("restore", help="run the network on a sequence")
    model_opts(p)
    p.add_argument("--checkpoint", help="checkpoint directory (overrides --config)")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--csv", help="write the timing row here instead of stdout")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("train-smoke", help="overfit one clip and print the loss curve")
    model_opts(p)
    p.add_argument("--hq", help="training sequence (default: synthetic translating clip)")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--frames", type=int, default=4)
    p.add_argument("--size", type=int, default=16, help="low-quality crop size")
    p.add_argument("--save", help="write a checkpoint directory after training")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_smoke)

    p = sub.add_parser("eval", help="PSNR/SSIM of restored sequences against references")
    p.add_argument("--lq", required=True, help="restored (or low-quality) sequence(s)")
    p.add_argument("--hq", required=True, help="reference sequence(s)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of the whole model")
    model_opts(p)
    p.add_argument("--frames", type=int, default=2)
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--out")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (VrtError, OSError) as exc:
        print(f"vrtkit {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
