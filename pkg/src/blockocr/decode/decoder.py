from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch

from ..errors import ConfigError, RegimeError
from ..nn import AttentionRegime, CacheExactness, KVCache, ModelState, Regime, build_mask, forward_kv
from .canvas import TokenCanvas
from .oracle import OracleDenoiser
from .samplers import SamplerConfig, select_positions
from .trace import EOS, DecodeTrace, PassRecord


class CacheMode(str, Enum):
    NONE = "NONE"
    APPROX = "APPROX"
    EXACT = "EXACT"


@dataclass(frozen=True)
class DecodeRequest:
    """One decoding session's inputs.

    ``max_blocks=None`` uses as many blocks as the model's position table
    holds. ``canvas_length`` materializes a fixed canvas every pass (masked
    future slots included) instead of growing it block by block; it is how a
    full-canvas model is decoded with inference-time blocks.
    """

    image_patches: np.ndarray
    block_size: int = 16
    max_blocks: int | None = None
    cache_mode: CacheMode = CacheMode.NONE
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    oracle_length: int | None = None
    canvas_length: int | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cache_mode", CacheMode(self.cache_mode))
        if self.block_size < 1:
            raise ConfigError("block_size must be >= 1")
        if self.max_blocks is not None and self.max_blocks < 1:
            raise ConfigError("max_blocks must be >= 1")
        if self.oracle_length is not None and self.oracle_length < 1:
            raise ConfigError("oracle_length must be >= 1")
        if self.canvas_length is not None:
            if self.canvas_length < 1:
                raise ConfigError("canvas_length must be >= 1")
            if self.cache_mode is not CacheMode.NONE:
                raise ConfigError("a fixed canvas_length is only supported without a KV-cache")


def _softmax(logits: torch.Tensor) -> np.ndarray:
    return torch.softmax(logits.double(), dim=-1).numpy()


def check_cache_mode(regime: AttentionRegime, mode: CacheMode):
    mode = CacheMode(mode)
    if mode is CacheMode.EXACT and not regime.is_causal:
        raise RegimeError(
            f"cache mode EXACT needs a BLOCK_CAUSAL or FULL_CAUSAL model; this one is {regime.tag.value}, "
            "whose prefix representations change as later blocks fill in"
        )
    if mode is CacheMode.APPROX and regime.tag is not Regime.BIDIRECTIONAL:
        raise RegimeError(
            f"cache mode APPROX is the naive-reuse ablation for BIDIRECTIONAL models; "
            f"use EXACT for a {regime.tag.value} model"
        )


class _ModelSession:
    """Owns the KV-cache for one document and turns canvas views into block distributions."""

    def __init__(self, model: ModelState, request: DecodeRequest):
        self.model = model
        self.request = request
        self.patches = np.asarray(request.image_patches, dtype=np.float32)
        self.S = model.config.page_slots or len(self.patches)
        self.mode = request.cache_mode
        check_cache_mode(model.regime, self.mode)
        self.cache = None
        if self.mode is not CacheMode.NONE:
            exact = CacheExactness.EXACT if self.mode is CacheMode.EXACT else CacheExactness.APPROXIMATE
            self.cache = KVCache(model.config.num_layers, exact)
        self._last_active_kv = None

    def capacity(self) -> int:
        return self.model.config.max_positions - self.S

    def block_probs(self, canvas: TokenCanvas, b: int, start: int, end: int, view_end: int) -> np.ndarray:
        L = self.request.block_size
        mask = build_mask(self.model.regime, self.S, b, view_end - start, block_size=L)
        past = self.cache
        first = 0 if past is None else past.valid_length
        logits, new_kv = forward_kv(self.model, self.patches, canvas.slots[:view_end], mask, past)
        t0 = max(first - self.S, 0)
        if self.mode is CacheMode.EXACT:
            # the completed previous block (or the image) is recomputed in this pass and frozen now
            self.cache.append(new_kv, self.S + start - first)
        elif self.mode is CacheMode.APPROX:
            if first == 0:
                self.cache.append(new_kv, self.S)
            self._last_active_kv = (new_kv, self.S + start - first)
        return _softmax(logits[start - t0:end - t0])

    def end_block(self, start: int, end: int):
        if self.mode is CacheMode.APPROX:
            kv, offset = self._last_active_kv
            self.cache.append(kv, end - start, offset)


class _OracleSession:
    def __init__(self, oracle: OracleDenoiser, request: DecodeRequest):
        self.oracle = oracle

    def capacity(self) -> int | None:
        return None

    def block_probs(self, canvas, b, start, end, view_end) -> np.ndarray:
        return self.oracle.probs(np.arange(start, end))

    def end_block(self, start, end):
        pass


def _open_session(model, request: DecodeRequest):
    if isinstance(model, OracleDenoiser):
        return _OracleSession(model, request), model.eos_id, None
    cfg = model.config
    return _ModelSession(model, request), cfg.eos_id, cfg.mask_id


def _layout(model, request: DecodeRequest, session) -> tuple[int, list[tuple[int, int]]]:
    L = request.block_size
    if request.oracle_length is not None:
        length = request.oracle_length
    elif request.canvas_length is not None:
        length = request.canvas_length
    elif request.max_blocks is not None:
        length = L * request.max_blocks
    else:
        cap = session.capacity()
        if cap is None:
            # oracle: enough room for the believed text plus its EOS
            cap = len(model.truth) + abs(model.delta) + 1
            cap = -(-cap // L) * L
        length = (cap // L) * L
    if length < 1:
        raise ConfigError(f"block_size {L} does not fit in the model's position table")
    cap = session.capacity()
    if cap is not None and length > cap:
        raise ConfigError(f"canvas of {length} slots exceeds the model's {cap} text positions")
    blocks = [(s, min(s + L, length)) for s in range(0, length, L)]
    if request.max_blocks is not None:
        blocks = blocks[: request.max_blocks]
    return length, blocks


def decode_block(session, canvas: TokenCanvas, b: int, bounds: tuple[int, int], request: DecodeRequest,
                 rng: np.random.Generator, trace: DecodeTrace, view_end: int, suppress: int | None = None):
    """Fill block ``b`` (``bounds`` = absolute ``[start, end)``) by repeated forward/select/commit."""
    start, end = bounds
    if np.any(canvas.commit_step[:start] < 0):
        raise ValueError(f"block {b} started before every earlier slot was committed")
    if np.any(canvas.commit_step[start:end] >= 0):
        raise ValueError(f"block {b} is not fully masked")
    sampler = request.sampler
    width = end - start
    budget = sampler.max_steps_per_block or width
    for step in range(budget):
        t0 = time.perf_counter_ns()
        probs = session.block_probs(canvas, b, start, end, view_end)
        if suppress is not None:
            probs = probs.copy()
            probs[:, suppress] = 0.0
            total = probs.sum(axis=1, keepdims=True)
            # a row whose whole mass sat on EOS falls back to uniform over the rest
            empty = total[:, 0] <= 0
            probs[empty] = 1.0
            probs[empty, suppress] = 0.0
            probs /= probs.sum(axis=1, keepdims=True)
        masked = canvas.masked(start, end)
        p_masked = probs[masked - start]
        conf = p_masked.max(axis=1)
        if step == budget - 1:
            chosen = masked
        else:
            chosen = select_positions(conf, masked, sampler, step, width, rng, block_start=start)
        rows = p_masked[np.searchsorted(masked, chosen)]
        if sampler.greedy:
            values = rows.argmax(axis=1)
        else:
            values = np.array([rng.choice(len(r), p=r / r.sum()) for r in rows], dtype=np.int64)
        pass_index = trace.forward_passes
        canvas.commit(chosen, values, pass_index)
        trace.records.append(PassRecord(
            pass_index, b, [int(x) for x in chosen], [float(r[v]) for r, v in zip(rows, values)],
            trace.tokens_out, time.perf_counter_ns() - t0,
        ))
        if len(canvas.masked(start, end)) == 0:
            break
    session.end_block(start, end)


def eos_finalize(canvas: TokenCanvas, bounds: tuple[int, int], eos_id: int) -> bool:
    """Force EOS from the block's first EOS onward; True means stop after this block."""
    start, end = bounds
    if np.any(canvas.commit_step[start:end] < 0):
        raise ValueError("eos_finalize needs a fully committed block")
    return canvas.overwrite_eos_suffix(start, end, eos_id)


def decode(model, request: DecodeRequest) -> tuple[list[int], DecodeTrace]:
    """Block-by-block decoding until a block contains EOS or the blocks run out.

    ``model`` is a ModelState or an OracleDenoiser. With ``oracle_length``
    the canvas has exactly that many slots and EOS can never be committed.
    """
    t_start = time.perf_counter_ns()
    session, eos_id, mask_id = _open_session(model, request)
    if mask_id is None:
        mask_id = model.num_outputs
    length, blocks = _layout(model, request, session)
    canvas = TokenCanvas.empty(length, mask_id)
    trace = DecodeTrace(canvas, eos_id)
    rng = np.random.default_rng(request.seed)
    use_eos = request.oracle_length is None
    for b, bounds in enumerate(blocks):
        view_end = length if request.canvas_length is not None else bounds[1]
        decode_block(session, canvas, b, bounds, request, rng, trace, view_end,
                     suppress=None if use_eos else eos_id)
        if use_eos and eos_finalize(canvas, bounds, eos_id):
            trace.termination = EOS
            break
    trace.wall_clock_ns = time.perf_counter_ns() - t_start
    return trace.text, trace


def greedy_ar(model: ModelState, image_patches, max_len: int, *, use_cache: bool = True) -> tuple[list[int], DecodeTrace]:
    """Left-to-right argmax decoding, one token per forward pass."""
    if model.regime.tag is not Regime.FULL_CAUSAL:
        raise RegimeError(f"greedy_ar needs a FULL_CAUSAL model, got {model.regime.tag.value}")
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    t_start = time.perf_counter_ns()
    cfg = model.config
    patches = np.asarray(image_patches, dtype=np.float32)
    S = cfg.page_slots or len(patches)
    if max_len > cfg.max_positions - S:
        raise ConfigError(f"max_len {max_len} exceeds the model's {cfg.max_positions - S} text positions")
    canvas = TokenCanvas.empty(max_len, cfg.mask_id)
    trace = DecodeTrace(canvas, cfg.eos_id)
    cache = KVCache(cfg.num_layers, CacheExactness.EXACT) if use_cache else None
    for j in range(max_len):
        t0 = time.perf_counter_ns()
        mask = build_mask(model.regime, S, 0, j + 1)
        logits, new_kv = forward_kv(model, patches, canvas.slots[: j + 1], mask, cache)
        if cache is not None:
            # slot j reads slot j-1, already final, so its keys/values are too
            cache.append(new_kv)
        probs = _softmax(logits[-1])
        tok = int(probs.argmax())
        canvas.commit([j], [tok], j)
        trace.records.append(PassRecord(j, j, [j], [float(probs[tok])], j + 1, time.perf_counter_ns() - t0))
        if tok == cfg.eos_id:
            trace.termination = EOS
            break
    trace.wall_clock_ns = time.perf_counter_ns() - t_start
    return trace.text, trace
