from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from enum import Enum

from ..errors import ConfigError
from ..nn import Regime
from .schedule import NoiseSchedule, ScheduleFamily


class Variant(str, Enum):
    VANILLA = "VANILLA"
    BLOCK_BIDIR = "BLOCK_BIDIR"
    BLOCK_CAUSAL = "BLOCK_CAUSAL"
    AR_BASELINE = "AR_BASELINE"

    @property
    def regime(self) -> Regime:
        return {
            Variant.VANILLA: Regime.BIDIRECTIONAL,
            Variant.BLOCK_BIDIR: Regime.BIDIRECTIONAL,
            Variant.BLOCK_CAUSAL: Regime.BLOCK_CAUSAL,
            Variant.AR_BASELINE: Regime.FULL_CAUSAL,
        }[self]

    @property
    def is_block(self) -> bool:
        return self in (Variant.BLOCK_BIDIR, Variant.BLOCK_CAUSAL)


@dataclass(frozen=True)
class TrainingConfig:
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    variant: Variant = Variant.BLOCK_BIDIR
    block_size: int = 16
    canvas_length: int = 0  # VANILLA canvas; 0 = cover the longest document
    batch_size: int = 32
    total_steps: int = 20_000
    warmup_steps: int = 1_000
    decay_steps: int = 2_000
    peak_lr: float = 1e-3
    complementary_masking: bool = True
    pair_t: str = "matched"  # "matched": second entry weighted at 1 - t; "shared": same t
    stratified_t: bool = True
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if isinstance(self.schedule, (str, ScheduleFamily)):
            object.__setattr__(self, "schedule", NoiseSchedule(self.schedule))
        if self.warmup_steps < 0 or self.decay_steps < 0 or self.total_steps < 0:
            raise ConfigError("step counts must be >= 0")
        if self.warmup_steps + self.decay_steps > self.total_steps:
            raise ConfigError("warmup_steps + decay_steps must not exceed total_steps")
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.pair_t not in ("shared", "matched"):
            raise ConfigError("pair_t must be 'shared' or 'matched'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.family.value
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown training config key: {sorted(unknown)[0]}")
        try:
            return cls(**d)
        except ValueError as e:
            raise ConfigError(str(e)) from e
