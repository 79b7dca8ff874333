"""Attention masks over the materialized ``[image | prefix blocks | active block]`` axis."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import AttentionRegime, Regime

IMAGE = "IMAGE"
PREFIX_BLOCK = "PREFIX_BLOCK"
ACTIVE_BLOCK = "ACTIVE_BLOCK"


@dataclass(frozen=True)
class AttentionMask:
    allow: np.ndarray  # (query, key) booleans
    segment_boundaries: tuple[tuple[str, int, int], ...]

    @property
    def size(self) -> int:
        return self.allow.shape[0]


def build_mask(
    regime: AttentionRegime,
    image_count: int,
    committed_blocks: int,
    active_block_size: int,
    block_size: int | None = None,
) -> AttentionMask:
    """Build the allow matrix for one forward pass.

    Image queries only ever see image keys. Text rows follow the regime:
    all-visible (BIDIRECTIONAL), block-lower-triangular (BLOCK_CAUSAL) or
    token-lower-triangular (FULL_CAUSAL). ``block_size`` is the width of the
    committed prefix blocks; it defaults to the regime's block size, then to
    ``active_block_size``.
    """
    if image_count < 0 or committed_blocks < 0:
        raise ValueError("counts must be >= 0")
    if active_block_size < 1:
        raise ValueError("active_block_size must be >= 1")
    if block_size is None:
        block_size = regime.block_size or active_block_size

    prefix = committed_blocks * block_size
    n_text = prefix + active_block_size
    n = image_count + n_text
    allow = np.zeros((n, n), dtype=bool)
    allow[:image_count, :image_count] = True
    allow[image_count:, :image_count] = True

    # block id per text slot; the active block is always the last one
    block_of = np.empty(n_text, dtype=np.int64)
    block_of[:prefix] = np.arange(prefix) // block_size
    block_of[prefix:] = committed_blocks

    text = allow[image_count:, image_count:]
    if regime.tag is Regime.BIDIRECTIONAL:
        text[:] = True
    elif regime.tag is Regime.BLOCK_CAUSAL:
        text[:] = block_of[:, None] >= block_of[None, :]
    else:
        text[:] = np.tri(n_text, dtype=bool)

    segments = []
    if image_count:
        segments.append((IMAGE, 0, image_count))
    for b in range(committed_blocks):
        start = image_count + b * block_size
        segments.append((PREFIX_BLOCK, start, start + block_size))
    segments.append((ACTIVE_BLOCK, image_count + prefix, n))
    return AttentionMask(allow, tuple(segments))
