"""Accuracy and efficiency measurement over decode traces."""
from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field

import numpy as np

HIST_EDGES = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0, float("inf"))
REPORT_VERSION = 1
# light-to-dark monochrome ramp; cell colour is picked by commit-pass quantile
HEATMAP_GRADIENT = ("#f7f7f7", "#d9d9d9", "#bdbdbd", "#969696", "#737373", "#525252", "#252525", "#000000")


def levenshtein(a, b) -> int:
    """Unit-cost edit distance; single-row DP over the shorter sequence."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def ned(pred, truth) -> float:
    pred, truth = list(pred), list(truth)
    longest = max(len(pred), len(truth))
    if longest == 0:
        return 0.0
    return levenshtein(pred, truth) / longest


def ned_by_truth(pred, truth) -> float:
    """Alternative convention normalizing by ground-truth length only (may exceed 1)."""
    truth = list(truth)
    if not truth:
        return 0.0 if not list(pred) else float("inf")
    return levenshtein(pred, truth) / len(truth)


@dataclass
class DocumentResult:
    ned: float
    tokens_out: int
    forward_passes: int
    wall_clock_ns: int
    steps_per_token: float
    terminated_by: str


@dataclass
class EvalReport:
    documents: list[DocumentResult] = field(default_factory=list)
    mean_ned: float = 0.0
    median_ned: float = 0.0
    tps: float = 0.0
    median_steps_per_token: float = 0.0
    steps_histogram: list[int] = field(default_factory=lambda: [0] * (len(HIST_EDGES) - 1))
    exact_match: float = 0.0

    def aggregates(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "num_documents": len(self.documents),
            "mean_ned": self.mean_ned,
            "median_ned": self.median_ned,
            "exact_match": self.exact_match,
            "tps": self.tps,
            "median_steps_per_token": self.median_steps_per_token,
            "steps_histogram": {"edges": list(HIST_EDGES[:-1]) + ["inf"], "counts": self.steps_histogram},
        }

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["doc", "ned", "tokens_out", "forward_passes", "wall_clock_ns", "steps_per_token", "terminated_by"])
        for i, d in enumerate(self.documents):
            w.writerow([i, f"{d.ned:.6f}", d.tokens_out, d.forward_passes, d.wall_clock_ns,
                        f"{d.steps_per_token:.6f}", d.terminated_by])
        return out.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.aggregates(), indent=2)


def histogram(values) -> list[int]:
    counts = [0] * (len(HIST_EDGES) - 1)
    for v in values:
        for i in range(len(counts)):
            if HIST_EDGES[i] <= v < HIST_EDGES[i + 1]:
                counts[i] += 1
                break
    return counts


def summarize(traces, truths) -> EvalReport:
    """Per-document and aggregate metrics.

    ``truths`` are ground-truth texts without EOS. Throughput is total tokens
    over total seconds, not a mean of per-document ratios.
    """
    traces, truths = list(traces), list(truths)
    if len(traces) != len(truths):
        raise ValueError(f"{len(traces)} traces but {len(truths)} ground truths")
    docs = []
    for tr, truth in zip(traces, truths):
        passes = tr.forward_passes
        out = tr.tokens_out
        docs.append(DocumentResult(
            ned(tr.text, truth), out, passes, tr.wall_clock_ns, passes / max(out, 1), tr.termination,
        ))
    report = EvalReport(documents=docs)
    if not docs:
        return report
    neds = [d.ned for d in docs]
    spt = [d.steps_per_token for d in docs]
    report.mean_ned = float(np.mean(neds))
    report.median_ned = float(statistics.median(neds))
    report.exact_match = sum(n == 0 for n in neds) / len(neds)
    total_s = sum(d.wall_clock_ns for d in docs) / 1e9
    report.tps = sum(d.tokens_out for d in docs) / total_s if total_s > 0 else 0.0
    report.median_steps_per_token = float(statistics.median(spt))
    report.steps_histogram = histogram(spt)
    return report


def commit_heatmap(trace, line_width: int) -> list[list[int]]:
    """Row-major wrap of per-position commit pass indices over the decoded span."""
    if line_width < 1:
        raise ValueError("line_width must be >= 1")
    steps = [int(s) for s in trace.canvas.commit_step if s >= 0]
    return [steps[i:i + line_width] for i in range(0, len(steps), line_width)]


def heatmap_svg(grid: list[list[int]], cell: int = 10) -> str:
    """Plain SVG, one rect per cell; fill = gradient step of the cell's commit-pass quantile."""
    values = sorted(v for row in grid for v in row)
    width = max((len(r) for r in grid), default=0) * cell
    height = len(grid) * cell
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">']
    n = len(values)
    for r, row in enumerate(grid):
        for c, v in enumerate(row):
            q = np.searchsorted(values, v, side="right") / n if n else 0.0
            colour = HEATMAP_GRADIENT[min(int(q * len(HEATMAP_GRADIENT) - 1e-9), len(HEATMAP_GRADIENT) - 1)]
            parts.append(f'<rect x="{c * cell}" y="{r * cell}" width="{cell}" height="{cell}" '
                         f'fill="{colour}"><title>pass {v}</title></rect>')
    parts.append("</svg>")
    return "\n".join(parts)


def report_dict(report: EvalReport) -> dict:
    d = report.aggregates()
    d["documents"] = [asdict(x) for x in report.documents]
    return d
