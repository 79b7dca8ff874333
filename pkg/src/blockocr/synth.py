"""Synthetic transcription task: glyph-bitmap patch sequences with a unique target.

Every content token has an 8x8 binary glyph; a document is the sequence of
its (optionally noisy) flattened glyphs, one patch per token. EOS terminates
the target and is never rendered.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

GLYPH_SIDE = 8
GLYPH_BITS = GLYPH_SIDE * GLYPH_SIDE
MIN_HAMMING = 8
MAGIC = b"BOCDATA\x01"
FORMAT_VERSION = 1
NOISE_CLAMP = (-1.0, 2.0)


@dataclass(frozen=True)
class GlyphFont:
    glyphs: np.ndarray  # (vocab, 64) float32 in {0, 1}
    seed: int

    @property
    def vocab_size(self) -> int:
        return self.glyphs.shape[0]


def build_font(vocab_size: int, seed: int, max_retries: int = 10_000) -> GlyphFont:
    if not 1 <= vocab_size <= 2**20:
        raise ConfigError("vocab_size must be in [1, 2**20]")
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    bits = np.zeros((vocab_size, GLYPH_BITS), dtype=bool)
    for i in range(vocab_size):
        for _ in range(max_retries):
            cand = rng.random(GLYPH_BITS) < 0.5
            if i == 0 or (bits[:i] != cand).sum(axis=1).min() >= MIN_HAMMING:
                bits[i] = cand
                break
        else:
            raise ConfigError(
                f"could not place glyph {i} with Hamming margin {MIN_HAMMING}; use a smaller vocab_size"
            )
    return GlyphFont(bits.astype(np.float32), seed)


def nearest_glyph(font: GlyphFont, patches: np.ndarray) -> np.ndarray:
    """Closed-form decoder: id of the closest clean glyph for each patch."""
    patches = np.asarray(patches, dtype=np.float64).reshape(-1, GLYPH_BITS)
    g = font.glyphs.astype(np.float64)
    d = (patches**2).sum(1)[:, None] - 2 * patches @ g.T + (g**2).sum(1)[None]
    return d.argmin(axis=1)


@dataclass(frozen=True)
class DatasetConfig:
    vocab_size: int = 64
    min_len: int = 48
    max_len: int = 192
    pixel_noise: float = 0.0
    newline_period: int | None = None
    num_train: int = 2000
    num_eval: int = 200
    misaligned: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.pixel_noise < 0:
            raise ConfigError("pixel_noise must be >= 0")
        if self.newline_period is not None and self.newline_period < 2:
            raise ConfigError("newline_period must be >= 2")

    @property
    def eos_id(self) -> int:
        return self.vocab_size

    @property
    def model_vocab_size(self) -> int:
        """Content tokens + EOS + mask sentinel."""
        return self.vocab_size + 2

    @property
    def patch_dim(self) -> int:
        return 2 * GLYPH_BITS if self.misaligned else GLYPH_BITS

    @property
    def max_patches(self) -> int:
        return (self.max_len + 1) // 2 if self.misaligned else self.max_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown dataset config key: {sorted(unknown)[0]}")
        return cls(**d)


@dataclass
class SyntheticDocument:
    image_patches: np.ndarray  # (num_patches, patch_dim) float32
    target_tokens: np.ndarray  # int32, ends with EOS

    @property
    def text(self) -> np.ndarray:
        return self.target_tokens[:-1]


@dataclass
class Dataset:
    config: DatasetConfig
    split: str
    documents: list[SyntheticDocument] = field(default_factory=list)

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def __getitem__(self, i):
        return self.documents[i]


def render(font: GlyphFont, tokens: np.ndarray, noise: float, rng, misaligned: bool = False) -> np.ndarray:
    patches = font.glyphs[tokens]
    if misaligned:
        if len(patches) % 2:
            patches = np.concatenate([patches, np.zeros((1, GLYPH_BITS), np.float32)])
        patches = patches.reshape(-1, 2 * GLYPH_BITS)
    if noise > 0:
        patches = patches + rng.uniform(-noise, noise, size=patches.shape)
        patches = np.clip(patches, *NOISE_CLAMP)
    return patches.astype(np.float32)


def _draw_documents(config: DatasetConfig, font: GlyphFont, rng, count: int) -> list[SyntheticDocument]:
    docs = []
    newline = config.vocab_size - 1
    n_regular = config.vocab_size - 1 if config.newline_period else config.vocab_size
    for _ in range(count):
        n = int(rng.integers(config.min_len, config.max_len + 1))
        toks = rng.integers(0, n_regular, size=n)
        if config.newline_period:
            toks[config.newline_period - 1 :: config.newline_period] = newline
        patches = render(font, toks, config.pixel_noise, rng, config.misaligned)
        target = np.append(toks, config.eos_id).astype(np.int32)
        docs.append(SyntheticDocument(patches, target))
    return docs


def generate(config: DatasetConfig) -> tuple[Dataset, Dataset]:
    """Train and eval splits; font, train and eval use independent seed-derived streams."""
    font = build_font(config.vocab_size, config.seed)
    _, train_seq, eval_seq = np.random.SeedSequence(config.seed).spawn(3)
    train = Dataset(config, "train", _draw_documents(config, font, np.random.default_rng(train_seq), config.num_train))
    evals = Dataset(config, "eval", _draw_documents(config, font, np.random.default_rng(eval_seq), config.num_eval))
    return train, evals


def serialize(dataset: Dataset) -> bytes:
    header = json.dumps({"config": dataset.config.to_dict(), "split": dataset.split}, sort_keys=True).encode()
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    out.write(header)
    out.write(struct.pack("<I", len(dataset.documents)))
    for doc in dataset.documents:
        p = np.ascontiguousarray(doc.image_patches, dtype="<f4")
        out.write(struct.pack("<III", p.shape[0], p.shape[1] if p.ndim == 2 else 0, len(doc.target_tokens)))
        out.write(p.tobytes())
        out.write(np.ascontiguousarray(doc.target_tokens, dtype="<i4").tobytes())
    return out.getvalue()


def deserialize(data: bytes) -> Dataset:
    def need(offset, size, what):
        if offset + size > len(data):
            raise FormatError(f"truncated {what}", offset)

    need(0, 16, "file header")
    if data[:8] != MAGIC:
        raise FormatError("not a dataset file", 0)
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise FormatError(f"dataset format version {version}, expected {FORMAT_VERSION}", 8)
    need(16, hlen + 4, "config header")
    header = json.loads(data[16:16 + hlen])
    config = DatasetConfig.from_dict(header["config"])
    off = 16 + hlen
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    docs = []
    for i in range(count):
        need(off, 12, f"record {i} header")
        n_p, dim, n_t = struct.unpack_from("<III", data, off)
        off += 12
        need(off, 4 * (n_p * dim + n_t), f"record {i} payload")
        patches = np.frombuffer(data, "<f4", n_p * dim, off).reshape(n_p, dim).astype(np.float32)
        off += 4 * n_p * dim
        tokens = np.frombuffer(data, "<i4", n_t, off).astype(np.int32)
        off += 4 * n_t
        docs.append(SyntheticDocument(patches, tokens))
    if off != len(data):
        raise FormatError("trailing bytes after last record", off)
    return Dataset(config, header["split"], docs)


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(serialize(dataset))
    return path


def load_dataset(path) -> Dataset:
    return deserialize(Path(path).read_bytes())
