import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from blockocr.errors import ConfigError, FormatError, NonFiniteGradientError, RegimeError
from blockocr.nn import (
    AttentionRegime, CacheExactness, KVCache, ModelConfig, Regime, adam_step, backward, build_mask,
    forward, forward_kv, load_checkpoint, save_checkpoint,
)
from blockocr.nn.checkpoint import from_bytes, to_bytes
from blockocr.nn.masks import ACTIVE_BLOCK, IMAGE, PREFIX_BLOCK

from conftest import tiny_model


# ---- config ---------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=8, embed_dim=10, num_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(vocab_size=2)
    with pytest.raises(ConfigError):
        AttentionRegime(Regime.BLOCK_CAUSAL)
    with pytest.raises(ConfigError):
        AttentionRegime(Regime.BLOCK_CAUSAL, 0)
    cfg = ModelConfig(vocab_size=10)
    assert (cfg.eos_id, cfg.mask_id, cfg.num_outputs) == (8, 9, 9)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({**cfg.to_dict(), "nope": 1})


def test_init_deterministic_and_moments_match():
    a, b = tiny_model(seed=3), tiny_model(seed=3)
    c = tiny_model(seed=4)
    assert all(torch.equal(a.params[k], b.params[k]) for k in a.params)
    assert not torch.equal(a.params["tok_emb"], c.params["tok_emb"])
    for k, p in a.params.items():
        assert a.exp_avg[k].shape == p.shape == a.exp_avg_sq[k].shape
        assert not a.exp_avg[k].any()
    assert a.step_count == 0


# ---- masks ----------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.sampled_from(list(Regime)), st.integers(0, 6), st.integers(0, 4), st.integers(1, 6), st.integers(1, 5))
def test_mask_invariants(tag, image, committed, active, block):
    regime = AttentionRegime(tag, block if tag is Regime.BLOCK_CAUSAL else None)
    m = build_mask(regime, image, committed, active, block)
    n = image + committed * block + active
    assert m.allow.shape == (n, n)
    assert m.allow.any(axis=1).all()
    # image queries never see text
    assert not m.allow[:image, image:].any()
    assert m.allow[image:, :image].all()
    text = m.allow[image:, image:]
    if tag is Regime.BIDIRECTIONAL:
        assert text.all()
    elif tag is Regime.BLOCK_CAUSAL:
        for b in range(committed):
            rows = slice(b * block, (b + 1) * block)
            assert not text[rows, (b + 1) * block:].any()
            assert text[rows, : (b + 1) * block].all()
    else:
        assert np.array_equal(text, np.tri(len(text), dtype=bool))
    tags = [s[0] for s in m.segment_boundaries]
    assert tags.count(ACTIVE_BLOCK) == 1 and tags.count(PREFIX_BLOCK) == committed
    assert (IMAGE in tags) == (image > 0)


def test_block_causal_example():
    m = build_mask(AttentionRegime(Regime.BLOCK_CAUSAL, 2), 0, 1, 2)
    expected = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1], [1, 1, 1, 1]], dtype=bool)
    assert np.array_equal(m.allow, expected)


# ---- forward / cache --------------------------------------------------------

def test_forward_shapes_and_errors(rng):
    m = tiny_model()
    img = rng.normal(size=(3, 8))
    toks = np.array([1, 2, m.config.mask_id])
    mask = build_mask(m.regime, 3, 0, 3)
    out = forward(m, img, toks, mask)
    assert out.shape == (3, m.config.num_outputs)
    with pytest.raises(ValueError):
        forward(m, img, toks, build_mask(m.regime, 3, 0, 2))
    with pytest.raises(ValueError):
        forward(m, img, np.array([1, 2, 99]), mask)
    with pytest.raises(ValueError):
        forward(m, rng.normal(size=(40, 8)), np.zeros(10, dtype=int), build_mask(m.regime, 40, 0, 10))


def test_exact_cache_rejected_on_bidirectional(rng):
    m = tiny_model()
    with pytest.raises(RegimeError):
        forward(m, rng.normal(size=(2, 8)), [1], build_mask(m.regime, 2, 0, 1), KVCache(2, CacheExactness.EXACT))


@pytest.mark.parametrize("tag", [Regime.BLOCK_CAUSAL, Regime.FULL_CAUSAL])
def test_cached_prefix_logits_match(tag, rng):
    L = 3
    m = tiny_model(tag, L if tag is Regime.BLOCK_CAUSAL else None, layers=3)
    img = rng.normal(size=(4, 8))
    toks = rng.integers(0, m.config.num_outputs, size=3 * L)
    full_mask = build_mask(m.regime, 4, 2, L, L)
    ref = forward(m, img, toks, full_mask)
    cache = KVCache(3, CacheExactness.EXACT)
    _, kv = forward_kv(m, img, toks[: 2 * L], build_mask(m.regime, 4, 1, L, L), cache)
    cache.append(kv)
    assert cache.valid_length == 4 + 2 * L
    out = forward(m, img, toks, full_mask, cache)
    torch.testing.assert_close(out, ref[2 * L:], rtol=1e-5, atol=1e-6)


def test_approx_cache_changes_bidirectional_logits(rng):
    m = tiny_model(layers=2)
    img = rng.normal(size=(2, 8))
    prefix = np.full(4, m.config.mask_id)
    toks = np.concatenate([rng.integers(0, 7, 4), prefix])
    cache = KVCache(2, CacheExactness.APPROXIMATE)
    _, kv = forward_kv(m, img, prefix, build_mask(m.regime, 2, 0, 4), None)
    cache.append(kv)
    stale = forward(m, img, toks, build_mask(m.regime, 2, 1, 4, 4), cache)
    fresh = forward(m, img, toks, build_mask(m.regime, 2, 1, 4, 4))[4:]
    assert not torch.allclose(stale, fresh, atol=1e-4)


# ---- backward / optimizer ---------------------------------------------------

def _fd_check(model, segments, rng, samples=12, h=1e-4):
    m64 = model.to(torch.float64)
    img = rng.normal(size=(3, 8))
    toks = rng.integers(0, m64.config.vocab_size, size=5)
    mask = build_mask(m64.regime, 3, 0, 5)
    R = torch.from_numpy(rng.normal(size=(5, m64.config.num_outputs)))
    forward(m64, img, toks, mask, record=True)
    grads = backward(m64, R)
    worst = 0.0
    for name in segments:
        p = m64.params[name]
        flat = p.view(-1)
        for i in rng.choice(flat.numel(), size=min(samples, flat.numel()), replace=False):
            old = flat[i].item()
            flat[i] = old + h
            up = float((forward(m64, img, toks, mask) * R).sum())
            flat[i] = old - h
            down = float((forward(m64, img, toks, mask) * R).sum())
            flat[i] = old
            num = (up - down) / (2 * h)
            ana = float(grads[name].view(-1)[i])
            scale = max(abs(num), abs(ana))
            if scale > 1e-6:
                worst = max(worst, abs(num - ana) / scale)
    return worst


@pytest.mark.parametrize("filt", ["attn.", "mlp.", ""])
def test_gradient_matches_finite_differences(filt, rng):
    m = tiny_model(layers=1 if filt else 2, d=8)
    segs = [k for k in m.params if filt in k]
    assert _fd_check(m, segs, rng) < 1e-3


def test_backward_requires_tape(rng):
    m = tiny_model()
    with pytest.raises(RuntimeError):
        backward(m, torch.zeros(1, m.config.num_outputs))
    img, toks = rng.normal(size=(2, 8)), np.array([1, 2])
    forward(m, img, toks, build_mask(m.regime, 2, 0, 2), record=True)
    with pytest.raises(ValueError):
        backward(m, torch.zeros(3, m.config.num_outputs))


def test_adam_matches_reference_formula(rng):
    m = tiny_model()
    before = {k: v.double().numpy().copy() for k, v in m.params.items()}
    grads = [{k: torch.from_numpy(rng.normal(size=v.shape)).float() for k, v in m.params.items()} for _ in range(3)]
    lr, b1, b2, eps, wd = 1e-2, 0.9, 0.999, 1e-8, 0.01
    mom = {k: np.zeros_like(v) for k, v in before.items()}
    vel = {k: np.zeros_like(v) for k, v in before.items()}
    ref = {k: v.copy() for k, v in before.items()}
    for t, g in enumerate(grads, 1):
        adam_step(m, g, lr)
        for k in ref:
            gk = g[k].double().numpy()
            ref[k] *= 1 - lr * wd
            mom[k] = b1 * mom[k] + (1 - b1) * gk
            vel[k] = b2 * vel[k] + (1 - b2) * gk**2
            ref[k] -= lr * (mom[k] / (1 - b1**t)) / (np.sqrt(vel[k] / (1 - b2**t)) + eps)
    assert m.step_count == 3
    for k in ref:
        np.testing.assert_allclose(m.params[k].double().numpy(), ref[k], rtol=1e-4, atol=1e-6)


def test_non_finite_gradient_names_segment():
    m = tiny_model()
    g = {k: torch.zeros_like(v) for k, v in m.params.items()}
    g["head.w"][0, 0] = float("nan")
    with pytest.raises(NonFiniteGradientError) as e:
        adam_step(m, g, 1e-3)
    assert e.value.segment == "head.w"
    assert m.step_count == 0


# ---- checkpoint -------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    m = tiny_model(Regime.BLOCK_CAUSAL, 4, page_slots=6)
    g = {k: torch.ones_like(v) for k, v in m.params.items()}
    adam_step(m, g, 1e-3)
    path = save_checkpoint(m, tmp_path / "a.ckpt")
    back = load_checkpoint(path)
    assert back.config == m.config and back.regime == m.regime and back.step_count == 1
    for store in ("params", "exp_avg", "exp_avg_sq"):
        a, b = getattr(m, store), getattr(back, store)
        assert all(torch.equal(a[k], b[k]) for k in a)
    assert to_bytes(back) == to_bytes(m)


def test_checkpoint_truncation_and_version(rng):
    data = to_bytes(tiny_model())
    with pytest.raises(FormatError, match="offset"):
        from_bytes(data[: len(data) - 7])
    bad = bytearray(data)
    bad[8] = 99
    with pytest.raises(FormatError, match="version"):
        from_bytes(bytes(bad))
    with pytest.raises(FormatError):
        from_bytes(b"garbage!" + data[8:])
