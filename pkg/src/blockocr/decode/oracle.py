from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OracleDenoiser:
    """Ground-truth posterior, usable wherever a model is accepted by the decode paths.

    ``num_outputs`` is the size of the predicted distribution (content tokens + EOS).
    From slot ``shift_start`` onward the oracle believes the text is displaced
    by ``delta``: slot ``j`` predicts ``truth[j - delta]``. Reads past the end
    (or before the start) predict EOS. ``noise`` mixes uniform mass into every
    distribution, so the argmax keeps probability ``1 - noise + noise / V``.
    """

    truth: tuple[int, ...]
    eos_id: int
    num_outputs: int
    delta: int = 0
    shift_start: int = 0
    noise: float = 0.0

    def __post_init__(self):
        if not 0 <= self.noise <= 1:
            raise ValueError("noise must be in [0, 1]")
        if not 0 <= self.eos_id < self.num_outputs:
            raise ValueError("eos_id must be a valid output class")

    def believed(self, positions) -> np.ndarray:
        pos = np.asarray(positions, dtype=np.int64)
        src = np.where(pos >= self.shift_start, pos - self.delta, pos)
        truth = np.asarray(self.truth, dtype=np.int64)
        ok = (src >= 0) & (src < len(truth))
        out = np.full(pos.shape, self.eos_id, dtype=np.int64)
        out[ok] = truth[src[ok]]
        return out

    def probs(self, positions) -> np.ndarray:
        tok = self.believed(positions)
        p = np.full((len(tok), self.num_outputs), self.noise / self.num_outputs)
        p[np.arange(len(tok)), tok] += 1.0 - self.noise
        return p


def oracle_denoiser(truth, eos_id: int, num_outputs: int, *, delta: int = 0, shift_start: int = 0,
                    noise: float = 0.0) -> OracleDenoiser:
    return OracleDenoiser(tuple(int(t) for t in truth), eos_id, num_outputs, delta, shift_start, noise)
