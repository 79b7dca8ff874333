"""Training and evaluation building blocks shared by the subcommands and repro bundles."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..decode import CacheMode, DecodeRequest, SamplerConfig, decode, greedy_ar, oracle_denoiser
from ..diffusion import Variant, train
from ..errors import ConfigError
from ..metrics import EvalReport, summarize
from ..nn import ModelState, init_model, load_checkpoint
from ..synth import Dataset, generate
from .profiles import Profile

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DecodeSettings:
    """Everything about a decode run except the model and the data."""

    block_size: int = 16
    cache_mode: str = "NONE"
    sampler: SamplerConfig = SamplerConfig()
    max_blocks: int | None = None
    oracle_length: bool = False
    canvas_length: int | None = None
    ar: bool = False
    seed: int = 0

    def to_dict(self) -> dict:
        s = self.sampler
        return {
            "block_size": self.block_size, "cache_mode": CacheMode(self.cache_mode).value,
            "sampler": {"strategy": s.strategy.value, "threshold": s.threshold, "k": s.k, "greedy": s.greedy,
                        "max_steps_per_block": s.max_steps_per_block},
            "max_blocks": self.max_blocks, "oracle_length": self.oracle_length,
            "canvas_length": self.canvas_length, "ar": self.ar, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecodeSettings":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown decode key: {sorted(unknown)[0]}")
        if isinstance(d.get("sampler"), dict):
            sd = d["sampler"]
            bad = set(sd) - set(SamplerConfig.__dataclass_fields__)
            if bad:
                raise ConfigError(f"unknown sampler key: {sorted(bad)[0]}")
            try:
                d["sampler"] = SamplerConfig(**sd)
            except ValueError as e:
                raise ConfigError(str(e)) from e
        if "cache_mode" in d:
            try:
                d["cache_mode"] = CacheMode(d["cache_mode"]).value
            except ValueError:
                raise ConfigError(f"unknown cache mode {d['cache_mode']!r}") from None
        return cls(**d)


def datasets_for(profile: Profile) -> tuple[Dataset, Dataset]:
    return generate(profile.dataset)


def checkpoint_path(root, profile: Profile, variant: Variant) -> Path:
    from .runs import config_hash

    key = config_hash({"profile": profile.to_dict(), "variant": Variant(variant).value,
                       "model": profile.model_config().to_dict(),
                       "training": profile.training_config(variant).to_dict()})
    return Path(root) / "checkpoints" / f"{profile.name}-{Variant(variant).value.lower()}-{key[:12]}" / "final.ckpt"


def train_variant(profile: Profile, variant: Variant, train_set: Dataset, out_dir, *, progress_every: int = 0) -> ModelState:
    variant = Variant(variant)
    model = init_model(profile.model_config(), profile.regime(variant))
    ckpt_dir = Path(out_dir)
    model, _ = train(profile.training_config(variant), train_set, model, log_path=ckpt_dir / "loss.csv",
                     checkpoint_dir=ckpt_dir, progress_every=progress_every)
    return model


def ensure_checkpoint(root, profile: Profile, variant: Variant, *, allow_train: bool, train_set=None,
                      progress_every: int = 0) -> ModelState:
    """Load the profile's checkpoint for ``variant``, training it first when allowed."""
    path = checkpoint_path(root, profile, variant)
    if path.exists():
        return load_checkpoint(path)
    if not allow_train:
        raise FileNotFoundError(f"missing checkpoint {path}; rerun with --train to build it")
    if train_set is None:
        train_set = datasets_for(profile)[0]
    log.info("training %s/%s -> %s", profile.name, Variant(variant).value, path)
    return train_variant(profile, variant, train_set, path.parent, progress_every=progress_every)


def decode_document(model, doc, settings: DecodeSettings, *, oracle: bool = False, eos_id: int | None = None,
                    num_outputs: int | None = None):
    """Decode one document; returns its trace."""
    if oracle:
        model = oracle_denoiser(doc.text, eos_id, num_outputs)
    if settings.ar:
        budget = model.config.max_positions - (model.config.page_slots or len(doc.image_patches))
        if settings.max_blocks is not None:
            budget = min(budget, settings.max_blocks)
        return greedy_ar(model, doc.image_patches, budget)[1]
    req = DecodeRequest(
        doc.image_patches, settings.block_size, settings.max_blocks, settings.cache_mode, settings.sampler,
        oracle_length=len(doc.text) if settings.oracle_length else None,
        canvas_length=settings.canvas_length, seed=settings.seed,
    )
    return decode(model, req)[1]


def evaluate(model, docs, settings: DecodeSettings, *, oracle: bool = False, eos_id=None,
             num_outputs=None) -> tuple[EvalReport, list]:
    traces = [decode_document(model, d, settings, oracle=oracle, eos_id=eos_id, num_outputs=num_outputs)
              for d in docs]
    return summarize(traces, [list(map(int, d.text)) for d in docs]), traces


def eval_subset(profile: Profile, eval_set: Dataset, limit: int | None = None) -> list:
    n = profile.eval_docs if limit is None else limit
    return list(eval_set)[: min(n, len(eval_set))]


def ned_array(report: EvalReport) -> np.ndarray:
    return np.array([d.ned for d in report.documents])
