"""Position-selection rules for one reverse step."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError


class Strategy(str, Enum):
    CONF_THRESHOLD = "CONF_THRESHOLD"
    CONF_TOPK = "CONF_TOPK"
    DUS = "DUS"
    RANDOM = "RANDOM"


@dataclass(frozen=True)
class SamplerConfig:
    strategy: Strategy = Strategy.CONF_THRESHOLD
    threshold: float = 0.98
    k: int = 1
    greedy: bool = True
    max_steps_per_block: int | None = None  # default: block width

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if self.strategy is Strategy.CONF_THRESHOLD and not 0 < self.threshold <= 1:
            raise ConfigError("CONF_THRESHOLD needs 0 < threshold <= 1")
        if self.strategy in (Strategy.CONF_TOPK, Strategy.RANDOM) and self.k < 1:
            raise ConfigError(f"{self.strategy.value} needs k >= 1")
        if self.max_steps_per_block is not None and self.max_steps_per_block < 1:
            raise ConfigError("max_steps_per_block must be >= 1")


def dus_schedule(block_len: int) -> list[list[int]]:
    """Stride-halving dilation rounds: round 0 is ``{0}``, each later round adds the new multiples of half the stride."""
    if block_len < 1:
        raise ValueError("block_len must be >= 1")
    levels = math.ceil(math.log2(block_len)) if block_len > 1 else 0
    seen = np.zeros(block_len, dtype=bool)
    rounds = []
    for r in range(levels + 1):
        stride = 2 ** (levels - r)
        cls = [p for p in range(0, block_len, stride) if not seen[p]]
        seen[cls] = True
        rounds.append(cls)
    return rounds


def select_positions(
    confidences: np.ndarray,
    positions: np.ndarray,
    sampler: SamplerConfig,
    round_index: int,
    block_len: int,
    rng: np.random.Generator | None = None,
    block_start: int = 0,
) -> np.ndarray:
    """Choose which masked slots to reveal this pass.

    ``confidences[i]`` is the argmax probability at masked slot ``positions[i]``
    (absolute, ascending). Ties break toward the lower position. Returns a
    sorted subset of ``positions``.
    """
    positions = np.asarray(positions)
    confidences = np.asarray(confidences, dtype=np.float64)
    if len(positions) == 0:
        raise ValueError("no masked position left to select")
    s = sampler.strategy
    if s is Strategy.CONF_THRESHOLD:
        chosen = positions[confidences > sampler.threshold]
        if len(chosen) == 0:
            chosen = positions[[int(np.argmax(confidences))]]
    elif s is Strategy.CONF_TOPK:
        order = np.argsort(-confidences, kind="stable")
        chosen = positions[order[: sampler.k]]
    elif s is Strategy.DUS:
        rounds = dus_schedule(block_len)
        if round_index >= len(rounds):
            chosen = positions
        else:
            wanted = block_start + np.asarray(rounds[round_index])
            chosen = positions[np.isin(positions, wanted)]
            if len(chosen) == 0:
                chosen = positions[:1]
    else:
        if rng is None:
            raise ValueError("RANDOM selection needs an rng")
        k = min(sampler.k, len(positions))
        chosen = rng.choice(positions, size=k, replace=False)
    return np.sort(chosen)
