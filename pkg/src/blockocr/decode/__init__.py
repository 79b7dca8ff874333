"""Reverse process: block-factorized decoding, samplers, caches and baselines."""
from .canvas import UNCOMMITTED, TokenCanvas
from .decoder import CacheMode, DecodeRequest, check_cache_mode, decode, decode_block, eos_finalize, greedy_ar
from .oracle import OracleDenoiser, oracle_denoiser
from .reference import vanilla_sample
from .samplers import SamplerConfig, Strategy, dus_schedule, select_positions
from .trace import EOS, MAX_BLOCKS, DecodeTrace, PassRecord, trace_from_jsonl

__all__ = [
    "CacheMode", "DecodeRequest", "DecodeTrace", "EOS", "MAX_BLOCKS", "OracleDenoiser", "PassRecord",
    "SamplerConfig", "Strategy", "TokenCanvas", "UNCOMMITTED", "check_cache_mode", "decode", "decode_block",
    "dus_schedule", "eos_finalize", "greedy_ar", "oracle_denoiser", "select_positions", "trace_from_jsonl",
    "vanilla_sample",
]
