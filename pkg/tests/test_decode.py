import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blockocr.decode import (
    EOS, MAX_BLOCKS, DecodeRequest, SamplerConfig, Strategy, TokenCanvas, decode, decode_block, dus_schedule,
    eos_finalize, greedy_ar, oracle_denoiser, select_positions, trace_from_jsonl, vanilla_sample,
)
from blockocr.decode.decoder import _open_session
from blockocr.errors import ConfigError, RegimeError
from blockocr.metrics import ned
from blockocr.nn import Regime

from conftest import tiny_model

THR = Strategy.CONF_THRESHOLD


# ---- select_positions / dus -----------------------------------------------

def test_threshold_selection():
    pos = np.arange(5, 9)
    assert select_positions([0.99] * 4, pos, SamplerConfig(THR, 0.98), 0, 4).tolist() == [5, 6, 7, 8]
    assert select_positions([0.5] * 4, pos, SamplerConfig(THR, 0.98), 0, 4).tolist() == [5]
    assert select_positions([0.2, 0.9, 0.9, 0.1], pos, SamplerConfig(THR, 0.98), 0, 4).tolist() == [6]
    # strictly greater than p
    assert select_positions([0.98, 0.99], pos[:2], SamplerConfig(THR, 0.98), 0, 2).tolist() == [6]


def test_topk_selection():
    s = SamplerConfig(Strategy.CONF_TOPK, k=4)
    assert select_positions([0.1, 0.2, 0.3], [0, 1, 2], s, 0, 3).tolist() == [0, 1, 2]
    s2 = SamplerConfig(Strategy.CONF_TOPK, k=2)
    assert select_positions([0.5, 0.9, 0.5, 0.5], [0, 1, 2, 3], s2, 0, 4).tolist() == [0, 1]


def test_random_and_dus_selection(rng):
    s = SamplerConfig(Strategy.RANDOM, k=3)
    picked = select_positions(np.zeros(6), np.arange(6), s, 0, 6, rng)
    assert len(picked) == 3 and len(set(picked.tolist())) == 3
    with pytest.raises(ValueError):
        select_positions(np.zeros(6), np.arange(6), s, 0, 6, None)
    d = SamplerConfig(Strategy.DUS)
    assert select_positions(np.ones(8), np.arange(8) + 16, d, 2, 8, block_start=16).tolist() == [18, 22]
    with pytest.raises(ValueError):
        select_positions([], [], d, 0, 8)


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(THR, threshold=0.0)
    with pytest.raises(ConfigError):
        SamplerConfig(Strategy.CONF_TOPK, k=0)
    with pytest.raises(ConfigError):
        SamplerConfig(max_steps_per_block=0)


def test_dus_examples():
    assert dus_schedule(8) == [[0], [4], [2, 6], [1, 3, 5, 7]]
    assert dus_schedule(1) == [[0]]
    five = dus_schedule(5)
    assert len(five) == 4 and sorted(p for r in five for p in r) == [0, 1, 2, 3, 4]


@given(st.integers(1, 64))
def test_dus_partition(L):
    rounds = dus_schedule(L)
    flat = [p for r in rounds for p in r]
    assert sorted(flat) == list(range(L)) and len(flat) == L
    assert len(rounds) == math.ceil(math.log2(L)) + 1
    assert rounds[0] == [0]


# ---- canvas / eos ---------------------------------------------------------

def test_canvas_carry_over():
    c = TokenCanvas.empty(4, mask_id=9)
    c.commit([1, 2], [5, 6], 0)
    with pytest.raises(ValueError, match="carry-over"):
        c.commit([2], [7], 1)
    assert c.slots.tolist() == [9, 5, 6, 9] and c.commit_step.tolist() == [-1, 0, 0, -1]
    assert c.masked().tolist() == [0, 3]


@pytest.mark.parametrize("block, expect, stop", [
    ([1, 2, 8, 3], [1, 2, 8, 8], True),
    ([1, 2, 3, 4], [1, 2, 3, 4], False),
    ([8, 1, 2, 3], [8, 8, 8, 8], True),
])
def test_eos_finalize(block, expect, stop):
    c = TokenCanvas.empty(8, mask_id=9)
    c.commit(range(4), [0, 0, 0, 0], 0)
    c.commit(range(4, 8), block, 1)
    assert eos_finalize(c, (4, 8), eos_id=8) is stop
    assert c.slots[4:].tolist() == expect
    assert c.slots[:4].tolist() == [0, 0, 0, 0]


def test_eos_finalize_needs_full_block():
    c = TokenCanvas.empty(4, mask_id=9)
    with pytest.raises(ValueError):
        eos_finalize(c, (0, 4), 8)


def test_decode_block_preconditions(rng):
    o = oracle_denoiser([1, 2, 3], eos_id=5, num_outputs=6)
    req = DecodeRequest(np.zeros((3, 2)), 2)
    session, _, _ = _open_session(o, req)
    from blockocr.decode.trace import DecodeTrace
    c = TokenCanvas.empty(4, 6)
    tr = DecodeTrace(c, 5)
    with pytest.raises(ValueError):
        decode_block(session, c, 1, (2, 4), req, rng, tr, 4)
    c.commit([0], [1], 0)
    with pytest.raises(ValueError):
        decode_block(session, c, 0, (0, 2), req, rng, tr, 2)


# ---- oracle-driven decoding -----------------------------------------------

def _oracle(truth, **kw):
    return oracle_denoiser(truth, eos_id=10, num_outputs=11, **kw)


SAMPLERS = [SamplerConfig(THR, 0.98), SamplerConfig(Strategy.CONF_TOPK, k=3), SamplerConfig(Strategy.DUS),
            SamplerConfig(Strategy.RANDOM, k=2), SamplerConfig(THR, 0.5, greedy=False)]


@pytest.mark.parametrize("sampler", SAMPLERS)
def test_clean_oracle_any_sampler(sampler, rng):
    truth = rng.integers(0, 10, 37).tolist()
    text, tr = decode(_oracle(truth), DecodeRequest(np.zeros((37, 2)), 8, sampler=sampler, seed=3))
    assert text == truth and ned(text, truth) == 0 and tr.termination == EOS


def test_oracle_one_pass_per_block():
    truth = list(np.arange(148) % 10)
    text, tr = decode(_oracle(truth), DecodeRequest(np.zeros((148, 2)), 16, sampler=SamplerConfig(THR, 0.5)))
    assert text == truth
    n_blocks = math.ceil(149 / 16)
    assert tr.forward_passes == n_blocks and tr.tokens_out == 16 * n_blocks
    assert len(tr.text) == 148
    assert all(r.confidences == [1.0] * len(r.positions) for r in tr.records)


def test_noisy_oracle_fallback_still_terminates():
    truth = list(np.arange(40) % 10)
    eps = 0.6
    text, tr = decode(_oracle(truth, noise=eps), DecodeRequest(np.zeros((40, 2)), 8, sampler=SamplerConfig(THR, 0.98)))
    assert text == truth
    assert all(len(r.positions) == 1 for r in tr.records)
    assert all(c == pytest.approx(1 - eps + eps / 11) for r in tr.records for c in r.confidences)
    per_block = np.bincount([r.block_index for r in tr.records])
    assert (per_block <= 8).all()


def test_topk1_block_takes_n_passes():
    truth = list(range(10)) * 2
    _, tr = decode(_oracle(truth), DecodeRequest(np.zeros((20, 2)), 7, sampler=SamplerConfig(Strategy.CONF_TOPK, k=1)))
    assert np.bincount([r.block_index for r in tr.records]).tolist() == [7, 7, 7]


def test_shifted_oracle_cannot_repair():
    truth = list(np.arange(30) % 10)
    canvas = 48
    o = _oracle(truth, delta=3, shift_start=15)
    text, _ = decode(o, DecodeRequest(np.zeros((30, 2)), canvas, max_blocks=1, sampler=SamplerConfig(THR, 0.98)))
    assert text[:15] == truth[:15]
    assert text[15:18] == truth[12:15]
    assert ned(text, truth) >= 3 / max(len(text), len(truth))


def test_oracle_length_mode_disables_eos():
    truth = [3, 1, 4, 1, 5]
    o = _oracle([*truth, 10, 10])  # oracle would predict EOS inside the canvas
    text, tr = decode(o, DecodeRequest(np.zeros((5, 2)), 4, oracle_length=7))
    assert tr.canvas.length == 7 and 10 not in tr.canvas.slots.tolist()
    assert text[:5] == truth and tr.termination == MAX_BLOCKS


def test_max_blocks_without_eos():
    o = _oracle(list(range(10)) * 5)
    text, tr = decode(o, DecodeRequest(np.zeros((50, 2)), 4, max_blocks=3))
    assert len(text) == 12 and tr.termination == MAX_BLOCKS


def test_trace_records_and_export():
    truth = list(np.arange(23) % 10)
    _, tr = decode(_oracle(truth, noise=0.3), DecodeRequest(np.zeros((23, 2)), 8))
    seen = [p for r in tr.records for p in r.positions]
    assert len(seen) == len(set(seen))
    assert set(seen) == set(np.flatnonzero(tr.canvas.commit_step >= 0).tolist())
    assert [r.committed_total for r in tr.records] == list(np.cumsum([len(r.positions) for r in tr.records]))
    back = trace_from_jsonl(tr.to_jsonl(), mask_id=11)
    assert back.text == tr.text and back.forward_passes == tr.forward_passes
    assert np.array_equal(back.canvas.commit_step, tr.canvas.commit_step)
    assert back.commit_order() == tr.commit_order()
    with pytest.raises(ValueError):
        trace_from_jsonl(tr.to_jsonl().replace('"trace_version": 1', '"trace_version": 7'), 11)


def test_request_validation():
    with pytest.raises(ConfigError):
        DecodeRequest(np.zeros((1, 2)), 0)
    with pytest.raises(ConfigError):
        DecodeRequest(np.zeros((1, 2)), 4, canvas_length=16, cache_mode="EXACT")
    with pytest.raises(ValueError):
        DecodeRequest(np.zeros((1, 2)), 4, cache_mode="SOMETIMES")


# ---- model-driven decoding ------------------------------------------------

def test_cache_mode_regime_rules(rng):
    img = rng.normal(size=(3, 8))
    with pytest.raises(RegimeError):
        decode(tiny_model(), DecodeRequest(img, 4, 2, "EXACT"))
    with pytest.raises(RegimeError):
        decode(tiny_model(Regime.BLOCK_CAUSAL, 4), DecodeRequest(img, 4, 2, "APPROX"))
    with pytest.raises(RegimeError):
        greedy_ar(tiny_model(Regime.BLOCK_CAUSAL, 4), img, 4)


def test_canvas_must_fit_position_table(rng):
    with pytest.raises(ConfigError):
        decode(tiny_model(max_positions=20), DecodeRequest(rng.normal(size=(4, 8)), 8, 3))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000),
       st.sampled_from([THR, Strategy.CONF_TOPK, Strategy.DUS, Strategy.RANDOM]))
def test_exact_cache_matches_no_cache(L, blocks, layers, seed, strategy):
    m = tiny_model(Regime.BLOCK_CAUSAL, L, layers=layers, seed=seed)
    img = np.random.default_rng(seed).normal(size=(3, 8))
    s = SamplerConfig(strategy, threshold=0.3, k=2)
    a = decode(m, DecodeRequest(img, L, blocks, "NONE", s, seed=seed))[1]
    b = decode(m, DecodeRequest(img, L, blocks, "EXACT", s, seed=seed))[1]
    assert np.array_equal(a.canvas.slots, b.canvas.slots)
    assert np.array_equal(a.canvas.commit_step, b.canvas.commit_step)


def test_approx_cache_is_not_exact(rng):
    differs = 0
    for seed in range(10):
        m = tiny_model(seed=seed, layers=2)
        img = rng.normal(size=(3, 8))
        s = SamplerConfig(Strategy.CONF_TOPK, k=1)
        a = decode(m, DecodeRequest(img, 3, 4, "NONE", s))[1]
        b = decode(m, DecodeRequest(img, 3, 4, "APPROX", s))[1]
        differs += not np.array_equal(a.canvas.slots, b.canvas.slots)
    assert differs > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000), st.booleans(),
       st.sampled_from([THR, Strategy.CONF_TOPK, Strategy.DUS, Strategy.RANDOM]))
def test_one_block_equals_vanilla_sampler(C, seed, greedy, strategy):
    m = tiny_model(seed=seed)
    img = np.random.default_rng(seed).normal(size=(4, 8))
    s = SamplerConfig(strategy, threshold=0.3, k=2, greedy=greedy)
    tr = decode(m, DecodeRequest(img, C, 1, sampler=s, seed=seed))[1]
    tokens, when = vanilla_sample(m, img, C, s, seed)
    ref = TokenCanvas(tokens, when, m.config.mask_id)
    ref.overwrite_eos_suffix(0, C, m.config.eos_id)
    assert np.array_equal(ref.slots, tr.canvas.slots) and np.array_equal(when, tr.canvas.commit_step)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 14), st.integers(0, 10_000))
def test_block_size_one_equals_greedy_ar(n, seed):
    m = tiny_model(Regime.FULL_CAUSAL, vocab=5, seed=seed)
    img = np.random.default_rng(seed).normal(size=(3, 8))
    ar, tr = greedy_ar(m, img, n)
    assert ar == greedy_ar(m, img, n, use_cache=False)[0]
    assert tr.forward_passes == tr.tokens_out
    assert all(len(r.positions) == 1 for r in tr.records)
    if n:
        for mode in ("EXACT", "NONE"):
            blk = decode(m, DecodeRequest(img, 1, n, mode, SamplerConfig(Strategy.CONF_TOPK, k=1)))[0]
            assert blk == ar


def test_greedy_ar_zero_length(rng):
    text, tr = greedy_ar(tiny_model(Regime.FULL_CAUSAL), rng.normal(size=(2, 8)), 0)
    assert text == [] and tr.forward_passes == 0


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 999),
       st.sampled_from(list(Strategy)), st.booleans())
def test_termination_bound(L, blocks, max_steps, seed, strategy, greedy):
    m = tiny_model(seed=seed)
    img = np.random.default_rng(seed).normal(size=(2, 8))
    s = SamplerConfig(strategy, threshold=0.999, k=1, greedy=greedy, max_steps_per_block=max_steps)
    _, tr = decode(m, DecodeRequest(img, L, blocks, sampler=s, seed=seed))
    assert tr.forward_passes <= blocks * max_steps
    # every visited block is fully committed
    last = max(r.block_index for r in tr.records)
    assert (tr.canvas.commit_step[: (last + 1) * L] >= 0).all()


def test_sampled_decode_is_seeded(rng):
    m = tiny_model(seed=5)
    img = rng.normal(size=(2, 8))
    s = SamplerConfig(THR, 0.5, greedy=False)
    a = decode(m, DecodeRequest(img, 4, 3, sampler=s, seed=1))[0]
    b = decode(m, DecodeRequest(img, 4, 3, sampler=s, seed=1))[0]
    assert a == b
