from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

T_MIN = 1e-3


class ScheduleFamily(str, Enum):
    LINEAR = "LINEAR"
    COSINE = "COSINE"


@dataclass(frozen=True)
class NoiseSchedule:
    """Mask-survival probability alpha(t), strictly decreasing from 1 at t=0 to 0 at t=1."""

    family: ScheduleFamily = ScheduleFamily.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "family", ScheduleFamily(self.family))

    def alpha(self, t: float) -> float:
        if self.family is ScheduleFamily.LINEAR:
            return 1.0 - t
        return math.cos(math.pi * t / 2) ** 2

    def alpha_prime(self, t: float) -> float:
        if self.family is ScheduleFamily.LINEAR:
            return -1.0
        return -math.pi / 2 * math.sin(math.pi * t)


def corrupt(clean, t: float, schedule: NoiseSchedule, rng: np.random.Generator, mask_id: int) -> np.ndarray:
    """Keep each token independently with probability alpha(t), otherwise replace it with ``mask_id``."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    clean = np.asarray(clean)
    keep = rng.random(clean.shape) < schedule.alpha(t)
    return np.where(keep, clean, mask_id)


def loss_weight(t: float, schedule: NoiseSchedule) -> float:
    """|alpha'(t)| / (1 - alpha(t)); the magnitude of the continuous-time ELBO weight."""
    if not 0.0 < t <= 1.0:
        raise ValueError(f"loss weight undefined at t={t}; clamp t >= {T_MIN}")
    return abs(schedule.alpha_prime(t)) / (1.0 - schedule.alpha(t))


def sample_timesteps(batch_size: int, stratified: bool, rng: np.random.Generator, t_min: float = T_MIN) -> np.ndarray:
    """Stratified: value i lies in stratum perm[i] of B equal strata of [0, 1)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if stratified:
        strata = rng.permutation(batch_size)
        return (strata + rng.random(batch_size)) / batch_size
    return rng.uniform(t_min, 1.0, size=batch_size)
