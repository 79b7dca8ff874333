"""Straight-line full-canvas masked-diffusion sampler.

Deliberately shares no loop code with :mod:`.decoder`; it is the reference
that one-block decoding must reproduce token for token.
"""
from __future__ import annotations

import numpy as np
import torch

from ..nn import AttentionMask, ModelState, forward
from .samplers import SamplerConfig, Strategy, dus_schedule


def vanilla_sample(model: ModelState, image_patches, canvas_length: int, sampler: SamplerConfig,
                   seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(tokens, commit_pass)`` for a bidirectional full-canvas decode; no EOS rewriting."""
    cfg = model.config
    patches = np.asarray(image_patches, dtype=np.float32)
    S = cfg.page_slots or len(patches)
    n = S + canvas_length
    allow = np.ones((n, n), dtype=bool)
    allow[:S, S:] = False
    mask = AttentionMask(allow, ())
    rng = np.random.default_rng(seed)
    tokens = np.full(canvas_length, cfg.mask_id, dtype=np.int64)
    when = np.full(canvas_length, -1, dtype=np.int64)
    budget = sampler.max_steps_per_block or canvas_length
    rounds = dus_schedule(canvas_length)
    for step in range(budget):
        probs = torch.softmax(forward(model, patches, tokens, mask).double(), -1).numpy()
        open_ = [i for i in range(canvas_length) if when[i] < 0]
        conf = [probs[i].max() for i in open_]
        if step == budget - 1:
            pick = open_
        elif sampler.strategy is Strategy.CONF_THRESHOLD:
            pick = [i for i, c in zip(open_, conf) if c > sampler.threshold]
            if not pick:
                best = max(range(len(open_)), key=lambda a: (conf[a], -a))
                pick = [open_[best]]
        elif sampler.strategy is Strategy.CONF_TOPK:
            ranked = sorted(range(len(open_)), key=lambda a: (-conf[a], a))
            pick = sorted(open_[a] for a in ranked[: sampler.k])
        elif sampler.strategy is Strategy.DUS:
            pick = [i for i in rounds[step] if when[i] < 0] if step < len(rounds) else open_
            pick = pick or open_[:1]
        else:
            pick = sorted(rng.choice(open_, size=min(sampler.k, len(open_)), replace=False).tolist())
        for i in pick:
            if sampler.greedy:
                tokens[i] = int(np.argmax(probs[i]))
            else:
                tokens[i] = int(rng.choice(len(probs[i]), p=probs[i] / probs[i].sum()))
            when[i] = step
        if (when >= 0).all():
            break
    return tokens, when
