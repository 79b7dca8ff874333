"""Corrupted training entries and their padded-batch collation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..nn import AttentionRegime, ModelConfig, build_mask, layout_patches
from .config import TrainingConfig, Variant
from .schedule import T_MIN, loss_weight, sample_timesteps


@dataclass
class MaskedBatch:
    image_patches: np.ndarray
    clean_tokens: np.ndarray  # materialized text x0 (prefix blocks + supervised span)
    corrupted_tokens: np.ndarray  # x_t
    t: float
    loss_weight: float
    active_block: int | None
    span: tuple[int, int]  # supervised span within the materialized text
    supervised: np.ndarray  # bool over materialized text

    @property
    def committed_blocks(self) -> int:
        return self.active_block or 0


def _pad(tokens: np.ndarray, length: int, eos_id: int) -> np.ndarray:
    if len(tokens) > length:
        raise ValueError(f"document of {len(tokens)} tokens does not fit a canvas of {length}")
    return np.concatenate([tokens, np.full(length - len(tokens), eos_id, dtype=tokens.dtype)])


def make_batch(
    examples,
    config: TrainingConfig,
    rng: np.random.Generator,
    *,
    eos_id: int,
    mask_id: int,
    canvas_length: int | None = None,
) -> list[MaskedBatch]:
    """Turn ``(image, tokens)`` pairs into loss entries.

    VANILLA is the one-block case of the block path with block width equal to
    the canvas, so both consume the rng identically.
    """
    if not examples:
        raise ValueError("make_batch needs at least one example")
    variant = config.variant
    canvas = canvas_length or config.canvas_length
    if variant is Variant.VANILLA and not canvas:
        raise ValueError("VANILLA training needs a canvas_length")
    ts = np.maximum(sample_timesteps(len(examples), config.stratified_t, rng), T_MIN)
    entries: list[MaskedBatch] = []
    for (image, tokens), t in zip(examples, ts):
        tokens = np.asarray(tokens, dtype=np.int64)
        if len(tokens) == 0 or tokens[-1] != eos_id:
            raise ValueError("target sequences must end with EOS")
        image = np.asarray(image, dtype=np.float32)
        width = canvas if variant is Variant.VANILLA else config.block_size
        padded = _pad(tokens, -(-len(tokens) // width) * width, eos_id)

        if variant is Variant.AR_BASELINE:
            entries.append(MaskedBatch(
                image, padded, padded.copy(), 1.0, 1.0, None, (0, len(padded)),
                np.ones(len(padded), dtype=bool),
            ))
            continue

        n_blocks = len(padded) // width
        b = int(rng.integers(n_blocks))
        lo, hi = b * width, (b + 1) * width
        clean = padded[:hi]
        masked = rng.random(width) >= config.schedule.alpha(float(t))
        pairs = [(float(t), masked)]
        if config.complementary_masking:
            t2 = float(t) if config.pair_t == "shared" else max(1.0 - float(t), T_MIN)
            pairs.append((t2, ~masked))
        for t_e, m in pairs:
            sup = np.zeros(hi, dtype=bool)
            sup[lo:hi] = m
            corrupted = np.where(sup, mask_id, clean)
            entries.append(MaskedBatch(
                image, clean, corrupted, t_e, loss_weight(t_e, config.schedule),
                b if variant.is_block else None, (lo, hi), sup,
            ))
    return entries


@dataclass
class Collated:
    patches: torch.Tensor
    image_len: torch.Tensor
    tokens: torch.Tensor
    targets: torch.Tensor
    supervised: torch.Tensor
    weights: torch.Tensor
    allow: torch.Tensor


def collate(
    entries: list[MaskedBatch],
    model_config: ModelConfig,
    regime: AttentionRegime,
    variant: Variant,
    block_size: int,
) -> Collated:
    images = [layout_patches(model_config, e.image_patches) for e in entries]
    S = max(im.shape[0] for im in images)
    T = max(len(e.clean_tokens) for e in entries)
    B, N = len(entries), S + T
    patches = torch.zeros(B, S, model_config.image_token_dim)
    tokens = torch.full((B, T), model_config.eos_id, dtype=torch.long)
    targets = torch.full((B, T), model_config.eos_id, dtype=torch.long)
    supervised = torch.zeros(B, T, dtype=torch.bool)
    allow = torch.zeros(B, N, N, dtype=torch.bool)
    allow[:, torch.arange(N), torch.arange(N)] = True  # pad rows see themselves
    image_len = torch.tensor([im.shape[0] for im in images])
    for i, (e, im) in enumerate(zip(entries, images)):
        P, n = im.shape[0], len(e.clean_tokens)
        patches[i, :P] = im
        tokens[i, :n] = torch.from_numpy(e.corrupted_tokens)
        targets[i, :n] = torch.from_numpy(e.clean_tokens)
        supervised[i, :n] = torch.from_numpy(e.supervised)
        if variant is Variant.AR_BASELINE or variant is Variant.VANILLA:
            mask = build_mask(regime, P, 0, n)
        else:
            mask = build_mask(regime, P, e.committed_blocks, block_size, block_size)
        m = torch.from_numpy(mask.allow)
        idx = torch.cat([torch.arange(P), S + torch.arange(n)])
        allow[i][idx[:, None], idx[None, :]] = m
    weights = torch.tensor([e.loss_weight for e in entries], dtype=torch.float32)
    return Collated(patches, image_len, tokens, targets, supervised, weights, allow)
