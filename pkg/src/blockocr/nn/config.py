from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum

from ..errors import ConfigError


class Regime(str, Enum):
    BIDIRECTIONAL = "BIDIRECTIONAL"
    BLOCK_CAUSAL = "BLOCK_CAUSAL"
    FULL_CAUSAL = "FULL_CAUSAL"


@dataclass(frozen=True)
class AttentionRegime:
    tag: Regime
    block_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "tag", Regime(self.tag))
        if self.tag is Regime.BLOCK_CAUSAL and (self.block_size is None or self.block_size < 1):
            raise ConfigError("BLOCK_CAUSAL regime requires block_size >= 1")

    @property
    def is_causal(self) -> bool:
        return self.tag is not Regime.BIDIRECTIONAL

    def to_dict(self) -> dict:
        return {"tag": self.tag.value, "block_size": self.block_size}

    @classmethod
    def from_dict(cls, d: dict) -> "AttentionRegime":
        return cls(Regime(d["tag"]), d.get("block_size"))


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the micro-transformer.

    Token ids: content tokens occupy ``0 .. vocab_size - 3``, then EOS, then
    the mask sentinel. The output head covers content tokens and EOS only.
    ``page_slots`` > 0 pads every image to that many patch cells, so text
    slot ``j`` always sits at position ``page_slots + j``.
    """

    vocab_size: int
    embed_dim: int = 64
    num_heads: int = 4
    num_layers: int = 2
    max_positions: int = 256
    image_token_dim: int = 64
    page_slots: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must be >= 3 (content, EOS, mask sentinel)")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigError(
                f"embed_dim={self.embed_dim} is not divisible by num_heads={self.num_heads}"
            )
        for name in ("embed_dim", "num_heads", "num_layers", "max_positions", "image_token_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.page_slots < 0 or self.page_slots >= self.max_positions:
            raise ConfigError("page_slots must be in [0, max_positions)")

    @property
    def eos_id(self) -> int:
        return self.vocab_size - 2

    @property
    def mask_id(self) -> int:
        return self.vocab_size - 1

    @property
    def num_outputs(self) -> int:
        return self.vocab_size - 1

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config key: {sorted(unknown)[0]}")
        return cls(**d)
