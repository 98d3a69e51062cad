"""Dataset ingestion and the training loop (crop/batch/Adam/schedule)."""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

import numpy as np

from .checkpoint import apply_to_model, load_checkpoint, save_checkpoint
from .config import Config
from .data import load_image, normalize, random_crop
from .errors import CdgnetError, InputError
from .model import CDGNet
from .optim import Adam, lr_at
from .supervision import sharpness_map, sharpness_mask, load_mask_image, total_loss
from .tensor import Tensor


@dataclasses.dataclass
class ImagePair:
    """One training pair with its cached binary sharpness mask."""
    name: str
    blurry01: np.ndarray  # (3,H,W) in [0,1]
    sharp01: np.ndarray   # (3,H,W) in [0,1]
    mask: np.ndarray      # (1,H,W) in {0,1}


def make_pair(name: str, blurry01: np.ndarray, sharp01: np.ndarray, mu: float,
              mask: np.ndarray | None = None) -> ImagePair:
    """Build a pair; the mask comes from the sharpness proxy on the blurry
    image unless an externally computed mask is supplied."""
    if blurry01.shape != sharp01.shape:
        raise InputError(
            f"pair {name}: blurry {blurry01.shape} vs sharp {sharp01.shape}")
    if mask is None:
        s = sharpness_map(blurry01)[0]
        mask = sharpness_mask(s, mu)
    return ImagePair(name, blurry01, sharp01, mask)


def load_pair_dataset(root: str | Path, mu: float, strict: bool = True,
                      warn=None) -> list[ImagePair]:
    """Directory layout: root/blur/*.png paired with root/sharp/*.png by
    filename; optional root/mask/*.png with externally computed masks."""
    root = Path(root)
    blur_dir, sharp_dir, mask_dir = root / "blur", root / "sharp", root / "mask"
    if not blur_dir.is_dir() or not sharp_dir.is_dir():
        raise InputError(f"dataset root {root} must contain blur/ and sharp/ directories")
    blur_names = {p.name for p in blur_dir.glob("*.png")}
    sharp_names = {p.name for p in sharp_dir.glob("*.png")}
    unpaired = sorted(blur_names ^ sharp_names)
    if unpaired:
        if strict:
            raise InputError(f"unpaired files: {', '.join(unpaired)}")
        if warn is not None:
            for name in unpaired:
                warn(f"skipping unpaired file {name}")
    pairs = []
    for name in sorted(blur_names & sharp_names):
        blurry = load_image(blur_dir / name)
        sharp = load_image(sharp_dir / name)
        mask = None
        mask_path = mask_dir / name
        if mask_path.exists():
            from PIL import Image
            gray = np.asarray(Image.open(mask_path).convert("L"))
            mask = load_mask_image(gray)[None]
        pairs.append(make_pair(name, blurry, sharp, mu, mask))
    if not pairs:
        raise InputError(f"no image pairs found under {root}")
    return pairs


@dataclasses.dataclass
class TrainResult:
    model: CDGNet
    optimizer: Adam
    step_losses: list[float]
    epoch_rows: list[tuple]  # (epoch, lr, total, rec, s, l)


def _write_metrics(path: Path, rows: list[tuple]) -> None:
    lines = ["epoch,lr,loss_total,loss_rec,loss_s,loss_l"]
    for epoch, lr, total, rec, s, l in rows:
        lines.append(f"{epoch},{lr:.10g},{total:.10g},{rec:.10g},{s:.10g},{l:.10g}")
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def train(pairs: list[ImagePair], cfg: Config, out_ckpt: str | Path,
          metrics_path: str | Path | None = None, resume: str | Path | None = None,
          max_steps: int | None = None, checkpoint_every: int = 50,
          log=None) -> TrainResult:
    """Deterministic training: a pure function of (pairs, config, seed).

    One epoch is a shuffled pass with drop-last batching; crops re-sample
    every epoch from a generator derived from (seed, epoch). Non-finite loss
    halts with the last good checkpoint already on disk.
    """
    if not pairs:
        raise InputError("dataset is empty")
    if len(pairs) < cfg.batch:
        raise InputError(
            f"dataset of {len(pairs)} pairs is smaller than batch size {cfg.batch}")
    out_ckpt = Path(out_ckpt)
    init_rng = np.random.default_rng(cfg.seed)
    model = CDGNet(cfg, init_rng, dtype=np.float32)
    named = list(model.named_parameters())
    adam = Adam(named)
    start_epoch = 0
    if resume is not None:
        loaded, state = load_checkpoint(resume)
        apply_to_model(model, loaded)
        if state is not None:
            adam.load_state(state["t"], state["m"], state["v"])
            start_epoch = state["epoch"]

    step_losses: list[float] = []
    epoch_rows: list[tuple] = []
    steps_done = 0

    def _save(epoch: int) -> None:
        save_checkpoint([(n, p.data) for n, p in named], out_ckpt,
                        optimizer_state={"epoch": epoch, "t": adam.t,
                                         "m": adam.m, "v": adam.v})

    final_epoch = start_epoch
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg.lr, cfg.lr_decay, cfg.lr_step)
        epoch_rng = np.random.default_rng([cfg.seed, epoch])
        order = epoch_rng.permutation(len(pairs))
        nbatches = len(pairs) // cfg.batch
        sums = np.zeros(4)
        count = 0
        for bi in range(nbatches):
            idxs = order[bi * cfg.batch:(bi + 1) * cfg.batch]
            xs, ts, ms = [], [], []
            for i in idxs:
                pair = pairs[i]
                blur, sharp, mask = random_crop(
                    [pair.blurry01, pair.sharp01, pair.mask], cfg.crop, epoch_rng)
                xs.append(normalize(blur))
                ts.append(normalize(sharp))
                ms.append(mask)
            x = Tensor(np.stack(xs).astype(np.float32))
            target = np.stack(ts).astype(np.float32)
            mask = np.stack(ms).astype(np.float32)
            out = model(x)
            loss, parts = total_loss(out["i_hat"], out["l_img"], out["s_img"],
                                     target, mask, cfg.lambda1, cfg.lambda2)
            value = float(loss.data)
            if not np.isfinite(value):
                _save(epoch)
                raise CdgnetError(
                    f"non-finite loss at epoch {epoch}; last good checkpoint saved")
            model.zero_grad()
            loss.backward()
            adam.step(lr)
            step_losses.append(value)
            sums += (value, parts["rec"], parts["s"], parts["l"])
            count += 1
            steps_done += 1
            if max_steps is not None and steps_done >= max_steps:
                break
        if count:
            mean = sums / count
            epoch_rows.append((epoch, lr, *mean))
            if log is not None:
                log(f"epoch {epoch}: lr={lr:.3g} loss={mean[0]:.6f} "
                    f"rec={mean[1]:.6f} s={mean[2]:.6f} l={mean[3]:.6f}")
        final_epoch = epoch + 1
        if (epoch + 1) % checkpoint_every == 0:
            _save(epoch + 1)
        if max_steps is not None and steps_done >= max_steps:
            break

    _save(final_epoch)
    if metrics_path is not None:
        _write_metrics(Path(metrics_path), epoch_rows)
    return TrainResult(model, adam, step_losses, epoch_rows)
