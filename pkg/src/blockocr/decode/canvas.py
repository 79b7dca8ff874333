from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNCOMMITTED = -1


@dataclass
class TokenCanvas:
    """Fixed-length slots, each a committed token or the mask sentinel.

    Committed slots are immutable; the only sanctioned rewrite is
    :meth:`overwrite_eos_suffix`.
    """

    slots: np.ndarray
    commit_step: np.ndarray
    mask_id: int

    @classmethod
    def empty(cls, length: int, mask_id: int) -> "TokenCanvas":
        return cls(np.full(length, mask_id, dtype=np.int64), np.full(length, UNCOMMITTED, dtype=np.int64), mask_id)

    @property
    def length(self) -> int:
        return len(self.slots)

    def masked(self, start: int = 0, end: int | None = None) -> np.ndarray:
        """Absolute indices of uncommitted slots in ``[start, end)``."""
        end = self.length if end is None else end
        return start + np.flatnonzero(self.commit_step[start:end] == UNCOMMITTED)

    def commit(self, positions, values, step: int):
        positions = np.asarray(positions, dtype=np.int64)
        if np.any(self.commit_step[positions] != UNCOMMITTED):
            raise ValueError("carry-over violation: slot already committed")
        self.slots[positions] = values
        self.commit_step[positions] = step

    def overwrite_eos_suffix(self, start: int, end: int, eos_id: int) -> bool:
        """From the first EOS in ``[start, end)`` onward, force EOS. True if an EOS was found."""
        seg = self.slots[start:end]
        hits = np.flatnonzero(seg == eos_id)
        if len(hits) == 0:
            return False
        seg[hits[0]:] = eos_id
        return True

    def text(self, eos_id: int) -> np.ndarray:
        """Committed tokens before the first EOS (or before the first uncommitted slot)."""
        stop = np.flatnonzero((self.slots == eos_id) | (self.commit_step == UNCOMMITTED))
        return self.slots[: stop[0] if len(stop) else self.length].copy()
