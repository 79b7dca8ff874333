from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import RegimeError
from ..nn import ModelState, adam_step, backward, forward_batch, save_checkpoint
from .batch import collate, make_batch
from .config import TrainingConfig, Variant
from .objective import batch_loss

log = logging.getLogger(__name__)

LOSS_LOG_COLUMNS = ("step", "lr", "loss", "wall_clock_ms")


@dataclass
class LossRecord:
    step: int
    lr: float
    loss: float
    wall_clock_ms: float


def lr_at(step: int, config: TrainingConfig) -> float:
    """Warmup-steady-decay: linear ramp to peak, flat, linear cooldown to zero."""
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps}]")
    peak = config.peak_lr
    if config.warmup_steps and step < config.warmup_steps:
        return peak * step / config.warmup_steps
    decay_start = config.total_steps - config.decay_steps
    if config.decay_steps and step > decay_start:
        return peak * (config.total_steps - step) / config.decay_steps
    return peak


def check_variant(model: ModelState, config: TrainingConfig):
    expected = config.variant.regime
    if model.regime.tag is not expected:
        raise RegimeError(
            f"variant {config.variant.value} needs a {expected.value} model, got {model.regime.tag.value}"
        )


def canvas_for(dataset, config: TrainingConfig) -> int:
    """VANILLA canvas: configured value, else the longest target rounded up to a block multiple."""
    if config.canvas_length:
        return config.canvas_length
    longest = max(len(d.target_tokens) for d in dataset)
    return -(-longest // config.block_size) * config.block_size


def train_step(model: ModelState, config: TrainingConfig, dataset, step: int, canvas: int) -> tuple[float, float]:
    """One optimizer step; the batch is drawn from an rng keyed by (seed, step) so resumes are exact."""
    rng = np.random.default_rng([config.seed, step])
    idx = rng.integers(len(dataset), size=config.batch_size)
    examples = [(dataset[i].image_patches, dataset[i].target_tokens) for i in idx]
    cfg = model.config
    entries = make_batch(examples, config, rng, eos_id=cfg.eos_id, mask_id=cfg.mask_id, canvas_length=canvas)
    batch = collate(entries, cfg, model.regime, config.variant, config.block_size)
    logits = forward_batch(model, batch.patches, batch.image_len, batch.tokens, batch.allow, record=True)
    loss, grad = batch_loss(logits, batch.targets, batch.supervised, batch.weights)
    grads = backward(model, grad)
    lr = lr_at(step + 1, config)
    adam_step(model, grads, lr)
    return loss, lr


def train(
    config: TrainingConfig,
    dataset,
    model: ModelState,
    *,
    log_path=None,
    checkpoint_dir=None,
    progress_every: int = 0,
) -> tuple[ModelState, list[LossRecord]]:
    """Run optimizer steps from ``model.step_count`` up to ``config.total_steps``.

    The loss log is append-only CSV; checkpoints land in ``checkpoint_dir`` at
    ``config.checkpoint_every`` intervals and as ``final.ckpt`` at the end.
    """
    check_variant(model, config)
    if config.variant is Variant.BLOCK_CAUSAL and model.regime.block_size != config.block_size:
        raise RegimeError("BLOCK_CAUSAL model block_size differs from the training block_size")
    records: list[LossRecord] = []
    if model.step_count >= config.total_steps:
        if checkpoint_dir:
            save_checkpoint(model, Path(checkpoint_dir) / "final.ckpt")
        return model, records
    if len(dataset) == 0:
        raise ValueError("empty training set")
    canvas = canvas_for(dataset, config)

    writer = fh = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        fh = open(log_path, "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(LOSS_LOG_COLUMNS)
    try:
        for step in range(model.step_count, config.total_steps):
            t0 = time.perf_counter()
            loss, lr = train_step(model, config, dataset, step, canvas)
            rec = LossRecord(step + 1, lr, loss, (time.perf_counter() - t0) * 1e3)
            records.append(rec)
            if writer:
                writer.writerow([rec.step, f"{rec.lr:.6g}", f"{rec.loss:.6f}", f"{rec.wall_clock_ms:.2f}"])
            if progress_every and rec.step % progress_every == 0:
                log.info("step %d lr %.2e loss %.4f", rec.step, lr, loss)
            if checkpoint_dir and config.checkpoint_every and rec.step % config.checkpoint_every == 0:
                save_checkpoint(model, Path(checkpoint_dir) / f"step_{rec.step}.ckpt")
    finally:
        if fh:
            fh.close()
    if checkpoint_dir:
        save_checkpoint(model, Path(checkpoint_dir) / "final.ckpt")
    return model, records
