"""Training loop: AdamW with a per-epoch cosine learning rate over chunk batches."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ModelConfig
from .data import DatasetItem, TrainingChunk, make_chunks
from .losses import training_loss, wave_l2
from .model import BinauralRenderer
from .nn import AdamW, LrSchedule, cosine_lr, threads

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: BinauralRenderer
    history: list[dict] = field(default_factory=list)
    best_valid: float = math.inf
    best_state: list[np.ndarray] | None = None


def chunks_for(items: list[DatasetItem], cfg: ModelConfig) -> list[TrainingChunk]:
    t = cfg.train
    out = []
    for item in items:
        out += make_chunks(item, t.chunk_len, t.chunk_hop, t.preroll)
    return out


def chunk_loss(model: BinauralRenderer, chunk: TrainingChunk) -> float:
    y = model.forward(chunk.mono, chunk.track, chunk.chunk_len, chunk.preroll)
    loss, _ = training_loss(y, chunk.binaural, model.cfg.loss, model.cfg.stft)
    return loss


def mean_loss(model: BinauralRenderer, chunks: list[TrainingChunk]) -> float:
    if not chunks:
        return math.nan
    return float(np.mean([chunk_loss(model, c) for c in chunks]))


def heldout_wave_l2(model: BinauralRenderer, items: list[DatasetItem]) -> float:
    """Mean Wave-l2 of whole-item renders against the reference binaural."""
    return float(np.mean([wave_l2(model.render(it.mono, it.track), it.binaural) for it in items]))


def train(cfg: ModelConfig, train_items: list[DatasetItem], valid_items: list[DatasetItem],
          log_path=None, out_path=None, best_path=None, model: BinauralRenderer | None = None,
          extra: dict | None = None) -> TrainResult:
    """Train from scratch (or continue ``model``) and return the final model and history.

    Each log line is a JSON object with epoch, lr, train_loss and valid_loss.
    """
    t = cfg.train
    train_chunks = chunks_for(train_items, cfg)
    valid_chunks = chunks_for(valid_items, cfg)
    if not train_chunks:
        raise TrainingError("no training chunks: dataset empty or items shorter than chunk_len")
    model = model or BinauralRenderer(cfg, seed=t.seed)
    params = model.params(active_only=True)
    opt = AdamW.from_config(params, cfg.optim)
    sched = LrSchedule(cfg.optim.lr_max, cfg.optim.lr_min, t.epochs)
    rng = np.random.default_rng(t.seed + 1)
    result = TrainResult(model)
    log = open(log_path, "w") if log_path else None
    try:
        with threads(t.threads):
            for epoch in range(t.epochs):
                lr = cosine_lr(epoch, sched)
                order = rng.permutation(len(train_chunks))
                losses = []
                for s in range(0, len(order), t.batch_size):
                    batch = order[s:s + t.batch_size]
                    model.zero_grad()
                    for i in batch:
                        c = train_chunks[i]
                        loss = model.loss_and_backward(c.mono, c.track, c.binaural, c.preroll)
                        if not math.isfinite(loss):
                            raise TrainingError(
                                f"non-finite loss at epoch {epoch} chunk {i} (start {c.start}); "
                                f"lr={lr:g}, max |param|="
                                f"{max(float(np.abs(p.value).max()) for p in params):g}")
                        losses.append(loss)
                    scale = np.float32(1.0 / len(batch))
                    for p in params:
                        p.grad *= scale
                    opt.step(lr)
                valid = mean_loss(model, valid_chunks)
                rec = {"epoch": epoch + 1, "lr": lr, "train_loss": float(np.mean(losses)),
                       "valid_loss": valid}
                result.history.append(rec)
                logger.info("epoch %d lr %.3g train %.5f valid %.5f", epoch + 1, lr,
                            rec["train_loss"], valid)
                if log:
                    log.write(json.dumps(rec) + "\n")
                    log.flush()
                if valid_chunks and valid < result.best_valid:
                    result.best_valid = valid
                    result.best_state = [p.value.copy() for p in model.params(active_only=False)]
                    if best_path:
                        save_checkpoint(best_path, model, {**(extra or {}), "epoch": epoch + 1,
                                                           "valid_loss": valid})
    finally:
        if log:
            log.close()
    if out_path:
        save_checkpoint(out_path, model, {**(extra or {}), "epoch": t.epochs})
    return result
