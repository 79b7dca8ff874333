import os
from pathlib import Path

import numpy as np
import pytest
import torch

from blockocr.nn import AttentionRegime, ModelConfig, Regime, init_model

torch.set_num_threads(1)

ROOT = Path(__file__).resolve().parents[1]
ARTIFACTS = Path(os.environ.get("BLOCKOCR_ARTIFACTS", ROOT / ".artifacts"))


def tiny_model(regime=Regime.BIDIRECTIONAL, block_size=None, *, vocab=8, d=16, heads=2, layers=2,
               max_positions=48, image_dim=8, page_slots=0, seed=0):
    cfg = ModelConfig(vocab_size=vocab, embed_dim=d, num_heads=heads, num_layers=layers,
                      max_positions=max_positions, image_token_dim=image_dim, page_slots=page_slots, seed=seed)
    return init_model(cfg, AttentionRegime(regime, block_size))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def artifacts():
    ARTIFACTS.mkdir(parents=True, exist_ok=True)
    return ARTIFACTS


CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one PASS/FAIL line, then asserts ``ok``."""

    def check(n, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        CRITERIA.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
