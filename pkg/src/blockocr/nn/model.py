"""Micro-transformer over a concatenated ``[image | text]`` position axis.

Pre-LN blocks, learned absolute positions, a linear patch projection plus a
modality embedding for the image side. No time input: the mask rate of the
text carries the noise level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import RegimeError
from .cache import CacheExactness, KVCache
from .config import AttentionRegime, ModelConfig, Regime
from .masks import AttentionMask

LN_EPS = 1e-5


@dataclass
class ModelState:
    config: ModelConfig
    regime: AttentionRegime
    params: dict[str, torch.Tensor]
    exp_avg: dict[str, torch.Tensor]
    exp_avg_sq: dict[str, torch.Tensor]
    step_count: int = 0
    _tape: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.params.values())

    def to(self, dtype: torch.dtype) -> "ModelState":
        """Copy with every store cast to ``dtype`` (used by float64 gradient checks)."""
        cast = lambda d: {k: v.to(dtype) for k, v in d.items()}  # noqa: E731
        return ModelState(
            self.config, self.regime, cast(self.params), cast(self.exp_avg),
            cast(self.exp_avg_sq), self.step_count,
        )


def _sinusoid(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(-math.log(10000.0) * torch.arange(0, d, 2, dtype=torch.float64) / d)
    table = torch.zeros(n, d, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: d // 2])
    return table.float()


def _cell_index(config: ModelConfig) -> torch.Tensor:
    """Page cell read by each position: image slot i is cell i, text slot j starts as cell j."""
    idx = torch.arange(config.max_positions)
    if config.page_slots:
        idx[config.page_slots:] -= config.page_slots
    return idx


def init_model(config: ModelConfig, regime: AttentionRegime) -> ModelState:
    """Deterministically initialize parameters and zeroed optimizer moments from ``config.seed``.

    The position table starts from a scaled sinusoid over page cells, with
    text slot ``j`` initialized like image cell ``j``; it is trained like any
    other segment.
    """
    g = torch.Generator().manual_seed(config.seed)
    d, f = config.embed_dim, 4 * config.embed_dim
    std = 0.02
    fan_in = 1.0 / math.sqrt(d)
    out_std = fan_in / math.sqrt(2 * config.num_layers)

    def normal(*shape, s=std):
        return torch.randn(*shape, generator=g) * s

    p: dict[str, torch.Tensor] = {
        "tok_emb": normal(config.vocab_size, d),
        "pos_emb": 0.5 * _sinusoid(config.max_positions, d)[_cell_index(config)] + normal(config.max_positions, d),
        "patch.w": normal(config.image_token_dim, d, s=1.0 / math.sqrt(config.image_token_dim)),
        "patch.b": torch.zeros(d),
        "modality": normal(2, d),
    }
    for i in range(config.num_layers):
        pre = f"layers.{i}."
        p[pre + "ln1.g"], p[pre + "ln1.b"] = torch.ones(d), torch.zeros(d)
        for name in ("q", "k", "v"):
            p[pre + f"attn.w{name}"] = normal(d, d, s=fan_in)
            p[pre + f"attn.b{name}"] = torch.zeros(d)
        p[pre + "attn.wo"] = normal(d, d, s=out_std)
        p[pre + "attn.bo"] = torch.zeros(d)
        p[pre + "ln2.g"], p[pre + "ln2.b"] = torch.ones(d), torch.zeros(d)
        p[pre + "mlp.w1"], p[pre + "mlp.b1"] = normal(d, f, s=fan_in), torch.zeros(f)
        p[pre + "mlp.w2"], p[pre + "mlp.b2"] = normal(f, d, s=out_std / 2), torch.zeros(d)
    p["ln_f.g"], p["ln_f.b"] = torch.ones(d), torch.zeros(d)
    p["head.w"] = normal(d, config.num_outputs, s=fan_in)
    p["head.b"] = torch.zeros(config.num_outputs)

    zeros = lambda: {k: torch.zeros_like(v) for k, v in p.items()}  # noqa: E731
    return ModelState(config, regime, p, zeros(), zeros(), 0)


def layout_patches(config: ModelConfig, patches) -> torch.Tensor:
    """Pad an image to ``config.page_slots`` blank cells (no-op when page_slots is 0)."""
    x = torch.as_tensor(np.asarray(patches, dtype=np.float32)).reshape(-1, config.image_token_dim)
    if config.page_slots:
        if x.shape[0] > config.page_slots:
            raise ValueError(f"image has {x.shape[0]} patches, page holds {config.page_slots}")
        x = torch.cat([x, x.new_zeros(config.page_slots - x.shape[0], x.shape[1])])
    return x


def _run(
    model: ModelState,
    params: dict[str, torch.Tensor],
    patches: torch.Tensor,
    tokens: torch.Tensor,
    image_len: torch.Tensor,
    allow: torch.Tensor,
    start: int,
    past: KVCache | None,
):
    """Compute positions ``start..N`` of a padded batch laid out as ``[image slots | text slots]``.

    Returns ``(text_logits, new_kv)`` where text_logits covers the computed text slots.
    """
    cfg = model.config
    B, S, _ = patches.shape
    T = tokens.shape[1]
    H, dh = cfg.num_heads, cfg.head_dim
    dtype = params["tok_emb"].dtype
    pos_emb = params["pos_emb"]

    parts = []
    if start < S:
        img = patches[:, start:].to(dtype) @ params["patch.w"] + params["patch.b"]
        parts.append(img + params["modality"][0] + pos_emb[start:S])
    t0 = max(start - S, 0)
    ids = tokens
    if model.regime.tag is Regime.FULL_CAUSAL:
        # slot j reads slot j-1; slot 0 reads the sentinel
        ids = torch.cat([tokens.new_full((B, 1), cfg.mask_id), tokens[:, :-1]], dim=1)
    text_pos = image_len[:, None] + torch.arange(t0, T)
    if T and int(text_pos.max()) >= cfg.max_positions:
        raise ValueError(f"sequence needs position {int(text_pos.max())}, max_positions={cfg.max_positions}")
    parts.append(params["tok_emb"][ids[:, t0:]] + params["modality"][1] + pos_emb[text_pos])
    x = torch.cat(parts, dim=1)
    n = x.shape[1]
    attn_mask = allow[:, None, start:, :]

    new_kv = []
    for i in range(cfg.num_layers):
        pre = f"layers.{i}."
        h = F.layer_norm(x, (cfg.embed_dim,), params[pre + "ln1.g"], params[pre + "ln1.b"], LN_EPS)
        q = (h @ params[pre + "attn.wq"] + params[pre + "attn.bq"]).view(B, n, H, dh).transpose(1, 2)
        k = (h @ params[pre + "attn.wk"] + params[pre + "attn.bk"]).view(B, n, H, dh).transpose(1, 2)
        v = (h @ params[pre + "attn.wv"] + params[pre + "attn.bv"]).view(B, n, H, dh).transpose(1, 2)
        new_kv.append((k, v))
        if past is not None and past.keys[i] is not None:
            k = torch.cat([past.keys[i], k], dim=2)
            v = torch.cat([past.values[i], v], dim=2)
        a = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        x = x + a.transpose(1, 2).reshape(B, n, cfg.embed_dim) @ params[pre + "attn.wo"] + params[pre + "attn.bo"]
        h = F.layer_norm(x, (cfg.embed_dim,), params[pre + "ln2.g"], params[pre + "ln2.b"], LN_EPS)
        x = x + F.gelu(h @ params[pre + "mlp.w1"] + params[pre + "mlp.b1"]) @ params[pre + "mlp.w2"] + params[pre + "mlp.b2"]

    x = x[:, max(S - start, 0):]
    x = F.layer_norm(x, (cfg.embed_dim,), params["ln_f.g"], params["ln_f.b"], LN_EPS)
    return x @ params["head.w"] + params["head.b"], new_kv


def _leaves(model: ModelState, record: bool) -> dict[str, torch.Tensor]:
    if not record:
        return model.params
    return {k: v.detach().requires_grad_(True) for k, v in model.params.items()}


def forward_kv(
    model: ModelState,
    image_patches,
    tokens,
    mask: AttentionMask,
    cache: KVCache | None = None,
    *,
    record: bool = False,
):
    """Single-document forward. Returns ``(logits, new_kv)``.

    ``tokens`` is the full materialized text (prefix + active block, mask
    sentinel in unrevealed slots). With a cache, only positions from
    ``cache.valid_length`` onward are computed; ``logits`` then covers the
    computed text slots and ``new_kv`` their keys/values.
    """
    cfg = model.config
    if cache is not None and cache.exactness is CacheExactness.EXACT and not model.regime.is_causal:
        raise RegimeError("an EXACT KV-cache is only sound for BLOCK_CAUSAL or FULL_CAUSAL models")
    if cache is not None and len(cache.keys) != cfg.num_layers:
        raise ValueError("cache layer count does not match the model")
    patches = layout_patches(cfg, image_patches)[None]
    toks = torch.as_tensor(np.asarray(tokens, dtype=np.int64))[None]
    n = patches.shape[1] + toks.shape[1]
    if mask.allow.shape != (n, n):
        raise ValueError(f"mask is {mask.allow.shape}, materialized sequence has {n} positions")
    if toks.numel() and (int(toks.min()) < 0 or int(toks.max()) >= cfg.vocab_size):
        raise ValueError("token id out of range")
    start = 0 if cache is None else cache.valid_length
    if start >= n:
        raise ValueError("every materialized position is already cached")
    allow = torch.from_numpy(mask.allow)[None]
    image_len = torch.tensor([patches.shape[1]])
    params = _leaves(model, record)
    with torch.set_grad_enabled(record):
        logits, new_kv = _run(model, params, patches, toks, image_len, allow, start, cache)
    logits = logits[0]
    if record:
        model._tape = (logits, params)
    return (logits.detach() if not record else logits), new_kv


def forward(model, image_patches, tokens, mask, cache=None, *, record=False) -> torch.Tensor:
    return forward_kv(model, image_patches, tokens, mask, cache, record=record)[0]


def forward_batch(
    model: ModelState,
    patches: torch.Tensor,
    image_len: torch.Tensor,
    tokens: torch.Tensor,
    allow: torch.Tensor,
    *,
    record: bool = False,
) -> torch.Tensor:
    """Padded-batch forward used by training: ``(B, T, num_outputs)`` logits."""
    params = _leaves(model, record)
    with torch.set_grad_enabled(record):
        logits, _ = _run(model, params, patches, tokens, image_len, allow, 0, None)
    if record:
        model._tape = (logits, params)
    return logits


def backward(model: ModelState, loss_grad_at_logits) -> dict[str, torch.Tensor]:
    """Parameter gradients for the most recent recorded forward pass.

    The tape is consumed: a second call without a new forward is rejected.
    """
    if model._tape is None:
        raise RuntimeError("backward called without a matching recorded forward pass")
    logits, leaves = model._tape
    grad = torch.as_tensor(loss_grad_at_logits, dtype=logits.dtype)
    if grad.shape != logits.shape:
        raise ValueError(f"upstream gradient {tuple(grad.shape)} does not match logits {tuple(logits.shape)}")
    model._tape = None
    names = list(leaves)
    grads = torch.autograd.grad(logits, [leaves[k] for k in names], grad, allow_unused=True)
    return {
        k: (g if g is not None else torch.zeros_like(leaves[k])).detach()
        for k, g in zip(names, grads)
    }
