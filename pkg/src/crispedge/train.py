"""Training loop: Adam with step decay, per-epoch CSV log, final and best checkpoints."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np

from .config import RunConfig, save_config
from .data import SamplePair, augment
from .evaluation import default_thresholds, evaluate
from .losses import get_loss
from .network import LUSNet
from .optim import AdamState, adam_step, step_lr
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

_CROP_RETRIES = 20


class TrainingError(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    val_ods: float = float("nan")
    seconds: float = 0.0


@dataclass
class TrainResult:
    model: LUSNet
    history: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_score: float = float("nan")


def make_batch(pairs: Sequence[SamplePair], idx, cfg: RunConfig, rng: np.random.Generator):
    images, targets = [], []
    for i in idx:
        # crops with (almost) no edges make the Tversky ratio explode; redraw them
        for _ in range(_CROP_RETRIES):
            s = augment(pairs[i], cfg.data.augment, rng)
            if sum(int(g.sum()) for g in s.gt) >= cfg.train.min_crop_edges:
                break
        images.append(s.image)
        # training uses the union of annotators as the target
        targets.append(np.logical_or.reduce(s.gt)[None])
    return np.stack(images), np.stack(targets).astype(np.float64)


def validation_ods(model: LUSNet, pairs: Sequence[SamplePair], cfg: RunConfig, batch: int = 10) -> float:
    preds = predict_all(model, [p.image for p in pairs], batch)
    report = evaluate(
        preds, [p.gt for p in pairs], cfg.eval.mode,
        default_thresholds(cfg.eval.thresholds), cfg.eval.tolerance,
    )
    return report.ods_f


def predict_all(model: LUSNet, images: Sequence[np.ndarray], batch: int = 10) -> List[np.ndarray]:
    """Eval-mode probability maps; same-sized images are batched together."""
    out: List[Optional[np.ndarray]] = [None] * len(images)
    by_shape: dict = {}
    for i, im in enumerate(images):
        by_shape.setdefault(np.shape(im), []).append(i)
    for idx in by_shape.values():
        for start in range(0, len(idx), batch):
            chunk = idx[start:start + batch]
            maps = model.predict(np.stack([images[i] for i in chunk]))
            for i, m in zip(chunk, maps):
                out[i] = m
    return out


def train(
    cfg: RunConfig,
    train_pairs: Sequence[SamplePair],
    val_pairs: Sequence[SamplePair] = (),
    out_dir: Optional[Path] = None,
    progress: Optional[Callable[[EpochRecord], None]] = None,
) -> TrainResult:
    """Train a fresh model; deterministic given ``cfg.train.seed``.

    The epoch-``e`` shuffle and augmentations draw from a generator seeded
    with ``(seed, e)``. With ``out_dir`` set, writes ``config.yaml``,
    ``train_log.csv``, ``final.ckpt`` and ``best.ckpt`` (best validation
    ODS, or lowest training loss without a validation set).
    """
    if not train_pairs:
        raise TrainingError("training set is empty")
    tc = cfg.train
    loss_fn = get_loss(cfg.loss.name)
    model = LUSNet(cfg.net, seed=tc.seed)
    params = model.parameters()
    state = AdamState.create(params, lr=tc.lr, weight_decay=tc.weight_decay)
    result = TrainResult(model)

    writer = fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out_dir / "config.yaml")
        fh = open(out_dir / "train_log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "loss", "val_ods", "seconds"])

    n = len(train_pairs)
    try:
        for epoch in range(tc.epochs):
            t0 = time.perf_counter()
            rng = np.random.default_rng([tc.seed, epoch])
            state.lr = step_lr(tc.lr, epoch, tc.lr_step, tc.lr_decay)
            order = rng.permutation(n)
            model.train()
            losses = []
            for start in range(0, n, tc.batch_size):
                x, g = make_batch(train_pairs, order[start:start + tc.batch_size], cfg, rng)
                params.zero_grad()
                loss = loss_fn(model(Tensor(x)), g, cfg.loss.params)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise TrainingError(
                        f"loss became {value} at epoch {epoch}, batch {start // tc.batch_size} "
                        f"(lr={state.lr:g}); try a lower learning rate"
                    )
                backward(loss)
                adam_step(params, state)
                losses.append(value)
            rec = EpochRecord(epoch, state.lr, float(np.mean(losses)))

            last = epoch == tc.epochs - 1
            if val_pairs and ((epoch + 1) % tc.eval_every == 0 or last):
                rec.val_ods = validation_ods(model, val_pairs, cfg)
                score = rec.val_ods
            else:
                score = -rec.loss if not val_pairs else float("nan")
            if not math.isnan(score) and (result.best_epoch < 0 or score > result.best_score):
                result.best_epoch, result.best_score = epoch, score
                if out_dir is not None:
                    model.save(out_dir / "best.ckpt")
            rec.seconds = time.perf_counter() - t0
            result.history.append(rec)
            log.info("epoch %d lr %.3g loss %.5f val_ods %.4f (%.1fs)", epoch, rec.lr, rec.loss, rec.val_ods, rec.seconds)
            if writer is not None:
                writer.writerow([epoch, f"{rec.lr:.6g}", f"{rec.loss:.8f}", f"{rec.val_ods:.6f}", f"{rec.seconds:.2f}"])
                fh.flush()
            if progress is not None:
                progress(rec)
        if out_dir is not None:
            model.save(out_dir / "final.ckpt")
    finally:
        if fh is not None:
            fh.close()
    model.eval()
    return result
