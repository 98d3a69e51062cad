"""Command-line entry point: train, deblur, eval, diagnose, gradcheck."""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import apply_to_model, load_checkpoint
from .config import Config, load_config
from .data import (denormalize, fourier_spectrum, gradient_histogram, load_image,
                   normalize, psnr, save_image, ssim)
from .errors import CdgnetError
from .gradcheck import SUITE, run_suite
from .model import CDGNet
from .tensor import Tensor
from .train import load_pair_dataset, train


def _load_cfg(path: str | None) -> Config:
    return load_config(path) if path else Config()


def _build_model(cfg: Config, ckpt_path: str) -> CDGNet:
    model = CDGNet(cfg, np.random.default_rng(cfg.seed), dtype=np.float32)
    params, _ = load_checkpoint(ckpt_path)
    apply_to_model(model, params)
    return model


def _forward_image(model: CDGNet, img01: np.ndarray) -> tuple[dict, tuple[int, int]]:
    """Reflect-pad extents to multiples of 4, run the network, report padding."""
    _, h, w = img01.shape
    ph = (-h) % 4
    pw = (-w) % 4
    if ph or pw:
        img01 = np.pad(img01, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    x = Tensor(normalize(img01)[None].astype(np.float32))
    out = model(x)
    return out, (ph, pw)


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    pairs = load_pair_dataset(args.data, cfg.mu, strict=True)
    metrics = args.metrics or str(Path(args.out).with_suffix(".metrics.csv"))
    train(pairs, cfg, args.out, metrics_path=metrics, resume=args.resume,
          log=lambda msg: print(msg, flush=True))
    print(f"checkpoint written to {args.out}; metrics at {metrics}")
    return 0


def cmd_deblur(args) -> int:
    cfg = _load_cfg(args.config)
    model = _build_model(cfg, args.ckpt)
    img01 = load_image(args.input)
    h, w = img01.shape[1], img01.shape[2]
    out, (ph, pw) = _forward_image(model, img01)
    if ph or pw:
        print(f"input extents ({h},{w}) not divisible by 4; "
              f"reflect-padded by ({ph},{pw}) and cropped back")
    result = denormalize(out["i_hat"].data[0])[:, :h, :w]
    save_image(result, args.output)
    if args.dump_aux:
        aux_dir = Path(args.dump_aux)
        aux_dir.mkdir(parents=True, exist_ok=True)
        save_image(denormalize(out["l_img"].data[0])[:, :h, :w],
                   aux_dir / "large_branch.png")
        save_image(denormalize(out["s_img"].data[0])[:, :h, :w],
                   aux_dir / "small_branch.png")
        for key, fname in (("m_s_large", "spatial_attention_large.png"),
                           ("m_s_small", "spatial_attention_small.png")):
            amap = out[key].data[0, 0]
            up = np.repeat(np.repeat(amap, 4, axis=0), 4, axis=1)[:h, :w]
            save_image(up, aux_dir / fname)
        print(f"auxiliary outputs written to {aux_dir}")
    print(f"deblurred image written to {args.output}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args.config)
    model = _build_model(cfg, args.ckpt)
    pairs = load_pair_dataset(args.data, cfg.mu, strict=False,
                              warn=lambda m: print(f"warning: {m}", file=sys.stderr))
    rows = []
    for pair in pairs:
        out, _ = _forward_image(model, pair.blurry01)
        h, w = pair.blurry01.shape[1], pair.blurry01.shape[2]
        pred = denormalize(out["i_hat"].data[0])[:, :h, :w]
        p = psnr(pred, pair.sharp01)
        s = ssim(pred, pair.sharp01)
        rows.append((pair.name, p, s))
        print(f"{pair.name}: psnr={p:.4f} ssim={s:.4f}")
    mean_p = sum(r[1] for r in rows) / len(rows)
    mean_s = sum(r[2] for r in rows) / len(rows)
    print(f"mean: psnr={mean_p:.4f} ssim={mean_s:.4f}")
    if args.csv:
        lines = ["name,psnr,ssim"]
        for name, p, s in rows:
            lines.append(f"{name},{'inf' if math.isinf(p) else f'{p:.10f}'},{s:.10f}")
        lines.append(
            f"mean,{'inf' if math.isinf(mean_p) else f'{mean_p:.10f}'},{mean_s:.10f}")
        _atomic_write(Path(args.csv), "\n".join(lines) + "\n")
    return 0


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def cmd_diagnose(args) -> int:
    img01 = load_image(args.input)
    hist = gradient_histogram(img01)
    profile, hf_ratio = fourier_spectrum(img01)
    lines = ["bin_index,count"]
    lines += [f"{i},{int(c)}" for i, c in enumerate(hist)]
    lines.append("radius,log_mag")
    lines += [f"{i},{v:.8f}" for i, v in enumerate(profile)]
    lines.append(f"hf_ratio,{hf_ratio:.8f}")
    _atomic_write(Path(args.output), "\n".join(lines) + "\n")
    print(f"diagnostics written to {args.output} (hf_ratio={hf_ratio:.6f})")
    return 0


def cmd_gradcheck(args) -> int:
    ops = None
    if args.op:
        if args.op not in SUITE:
            print(f"unknown op {args.op!r}; choices: {', '.join(SUITE)}", file=sys.stderr)
            return 2
        ops = [args.op]
    start = time.monotonic()
    results = run_suite(ops, seed=args.seed)
    elapsed = time.monotonic() - start
    failures = []
    for name, err in results.items():
        status = "ok" if err <= 1e-6 else "FAIL"
        print(f"{name}: max_rel_err={err:.3e} [{status}]")
        if err > 1e-6:
            failures.append(name)
    print(f"suite completed in {elapsed:.1f}s")
    if failures:
        print(f"tolerance exceeded: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cdgnet",
        description="Two-branch non-uniform motion deblurring network")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a paired dataset")
    p.add_argument("--data", required=True, help="dataset root with blur/ and sharp/")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--metrics", help="metrics CSV path (default: <out>.metrics.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("deblur", help="deblur a single image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--config", help="config matching the checkpoint")
    p.add_argument("--dump-aux", help="directory for branch images and attention maps")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("eval", help="mean PSNR/SSIM over a paired dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="config matching the checkpoint")
    p.add_argument("--csv", help="machine-readable results path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diagnose", help="gradient histogram and Fourier profile")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--op", help="run a single op's checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CdgnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
