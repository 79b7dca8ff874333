"""Trainable micro-transformer with pluggable attention regimes."""
from .cache import CacheExactness, KVCache
from .checkpoint import load_checkpoint, save_checkpoint
from .config import AttentionRegime, ModelConfig, Regime
from .masks import AttentionMask, build_mask
from .model import ModelState, backward, forward, forward_batch, forward_kv, init_model, layout_patches
from .optim import adam_step

__all__ = [
    "AttentionMask", "AttentionRegime", "CacheExactness", "KVCache", "ModelConfig", "ModelState",
    "Regime", "adam_step", "backward", "build_mask", "forward", "forward_batch", "forward_kv",
    "init_model", "layout_patches", "load_checkpoint", "save_checkpoint",
]
