"""Named experiment profiles: dataset, model size and training budget in one place."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

from ..diffusion import TrainingConfig, Variant
from ..errors import ConfigError
from ..nn import AttentionRegime, ModelConfig
from ..synth import DatasetConfig


@dataclass(frozen=True)
class Profile:
    name: str
    dataset: DatasetConfig
    embed_dim: int = 128
    num_heads: int = 4
    num_layers: int = 4
    block_size: int = 16
    batch_size: int = 32
    total_steps: int = 20_000
    warmup_steps: int = 1_000
    decay_steps: int = 2_000
    peak_lr: float = 1e-3
    schedule: str = "LINEAR"
    threshold: float = 0.98
    text_capacity: int = 256  # text slots in the position table (bounds the largest block sweep)
    eval_docs: int = 200
    variant_steps: dict[str, int] = field(default_factory=dict)  # per-variant step overrides
    seed: int = 0

    @property
    def vanilla_canvas(self) -> int:
        L = self.block_size
        return -(-(self.dataset.max_len + 1) // L) * L

    def regime(self, variant: Variant) -> AttentionRegime:
        variant = Variant(variant)
        return AttentionRegime(variant.regime, self.block_size if variant is Variant.BLOCK_CAUSAL else None)

    def model_config(self) -> ModelConfig:
        page = self.dataset.max_patches
        return ModelConfig(
            vocab_size=self.dataset.model_vocab_size, embed_dim=self.embed_dim, num_heads=self.num_heads,
            num_layers=self.num_layers, max_positions=page + self.text_capacity,
            image_token_dim=self.dataset.patch_dim, page_slots=page, seed=self.seed,
        )

    def training_config(self, variant: Variant) -> TrainingConfig:
        variant = Variant(variant)
        steps = self.variant_steps.get(variant.value, self.total_steps)
        # warmup and cooldown keep their share of the run when the step count changes
        scale = steps / self.total_steps if self.total_steps else 0.0
        warmup, decay = int(self.warmup_steps * scale), int(self.decay_steps * scale)
        if warmup + decay > steps:
            shrink = steps / (warmup + decay)
            warmup, decay = int(warmup * shrink), int(decay * shrink)
        return TrainingConfig(
            schedule=self.schedule, variant=variant, block_size=self.block_size,
            canvas_length=self.vanilla_canvas if variant is Variant.VANILLA else 0,
            batch_size=self.batch_size, total_steps=steps,
            warmup_steps=warmup, decay_steps=decay,
            peak_lr=self.peak_lr, seed=self.seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dataset"] = self.dataset.to_dict()
        return d

    def with_overrides(self, overrides: dict) -> "Profile":
        """Apply ``{"dataset": {...}, <profile field>: value}`` overrides; unknown keys are rejected."""
        overrides = dict(overrides)
        ds = overrides.pop("dataset", None)
        unknown = set(overrides) - set(self.__dataclass_fields__) - {"name"}
        if unknown:
            raise ConfigError(f"unknown profile key: {sorted(unknown)[0]}")
        p = replace(self, **overrides)
        if ds:
            p = replace(p, dataset=DatasetConfig.from_dict({**self.dataset.to_dict(), **ds}))
        return p


PROFILES: dict[str, Profile] = {
    # the laptop-scale reference configuration
    "desk": Profile(
        "desk", DatasetConfig(vocab_size=64, min_len=48, max_len=192, num_train=2000, num_eval=200, seed=0),
    ),
    # same task family shrunk to fit a single-core test run
    "small": Profile(
        "small", DatasetConfig(vocab_size=32, min_len=16, max_len=64, num_train=2000, num_eval=100, seed=1),
        embed_dim=64, num_heads=4, num_layers=2, batch_size=16, total_steps=1500, warmup_steps=75,
        decay_steps=300, peak_lr=3e-3, text_capacity=128, eval_docs=100,
        variant_steps={"AR_BASELINE": 1000},
    ),
    # canvases of 512+ slots, for cache timing only
    "long": Profile(
        "long", DatasetConfig(vocab_size=32, min_len=512, max_len=560, num_train=200, num_eval=4, seed=2),
        embed_dim=64, num_heads=4, num_layers=2, batch_size=2, total_steps=150, warmup_steps=10,
        decay_steps=30, peak_lr=3e-3, text_capacity=576, eval_docs=4,
    ),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; valid: {', '.join(PROFILES)}") from None
