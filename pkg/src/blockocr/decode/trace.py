"""Per-pass decode records and their export formats."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .canvas import TokenCanvas

TRACE_VERSION = 1
EOS = "EOS"
MAX_BLOCKS = "MAX_BLOCKS"
RECORD_FIELDS = ("pass_index", "block_index", "positions", "confidences", "committed_total", "wall_clock_ns")


@dataclass
class PassRecord:
    pass_index: int
    block_index: int
    positions: list[int]
    confidences: list[float]
    committed_total: int
    wall_clock_ns: int


@dataclass
class DecodeTrace:
    canvas: TokenCanvas
    eos_id: int
    records: list[PassRecord] = field(default_factory=list)
    termination: str = MAX_BLOCKS
    wall_clock_ns: int = 0

    @property
    def forward_passes(self) -> int:
        return len(self.records)

    @property
    def tokens_out(self) -> int:
        """Committed slots, EOS padding included."""
        return int((self.canvas.commit_step >= 0).sum())

    @property
    def text(self) -> list[int]:
        return [int(t) for t in self.canvas.text(self.eos_id)]

    def commit_order(self) -> dict[int, int]:
        """position -> pass index at which it was committed."""
        return {int(p): int(s) for p, s in enumerate(self.canvas.commit_step) if s >= 0}

    def to_jsonl(self) -> str:
        """One JSON object per forward pass, preceded by a header line."""
        head = {"trace_version": TRACE_VERSION, "termination": self.termination, "eos_id": self.eos_id,
                "canvas_length": self.canvas.length, "wall_clock_ns": self.wall_clock_ns,
                "slots": [int(x) for x in self.canvas.slots], "fields": list(RECORD_FIELDS)}
        lines = [json.dumps(head)]
        for r in self.records:
            lines.append(json.dumps({k: getattr(r, k) for k in RECORD_FIELDS}))
        return "\n".join(lines) + "\n"

    def commit_map_json(self) -> str:
        return json.dumps({"trace_version": TRACE_VERSION,
                           "commit_order": {str(k): v for k, v in self.commit_order().items()}})


def trace_from_jsonl(text: str, mask_id: int) -> DecodeTrace:
    lines = [json.loads(x) for x in text.splitlines() if x.strip()]
    head = lines[0]
    if head.get("trace_version") != TRACE_VERSION:
        raise ValueError(f"trace version {head.get('trace_version')}, expected {TRACE_VERSION}")
    canvas = TokenCanvas.empty(head["canvas_length"], mask_id)
    records = [PassRecord(**{k: r[k] for k in RECORD_FIELDS}) for r in lines[1:]]
    for r in records:
        canvas.commit_step[r.positions] = r.pass_index
    canvas.slots[:] = np.asarray(head["slots"], dtype=np.int64)
    return DecodeTrace(canvas, head["eos_id"], records, head["termination"], head["wall_clock_ns"])
