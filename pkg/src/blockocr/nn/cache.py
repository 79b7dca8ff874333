from __future__ import annotations

from enum import Enum

import torch


class CacheExactness(str, Enum):
    EXACT = "EXACT"
    APPROXIMATE = "APPROXIMATE"


class KVCache:
    """Per-layer keys/values for a contiguous prefix of the materialized sequence.

    Session-local: one cache per decoding session, never shared.
    """

    def __init__(self, num_layers: int, exactness: CacheExactness):
        self.exactness = CacheExactness(exactness)
        self.keys: list[torch.Tensor | None] = [None] * num_layers
        self.values: list[torch.Tensor | None] = [None] * num_layers
        self.valid_length = 0

    def append(self, new_kv: list[tuple[torch.Tensor, torch.Tensor]], count: int | None = None, offset: int = 0):
        """Append ``count`` positions of ``new_kv`` starting at ``offset`` (all remaining by default).

        ``new_kv`` holds one ``(k, v)`` pair per layer, each shaped
        ``(1, heads, n, head_dim)``; the appended slice must continue at
        ``valid_length``.
        """
        n = new_kv[0][0].shape[2] - offset if count is None else count
        if n == 0:
            return
        for i, (k, v) in enumerate(new_kv):
            k, v = k[:, :, offset:offset + n], v[:, :, offset:offset + n]
            if self.keys[i] is None:
                self.keys[i], self.values[i] = k, v
            else:
                self.keys[i] = torch.cat([self.keys[i], k], dim=2)
                self.values[i] = torch.cat([self.values[i], v], dim=2)
        self.valid_length += n
