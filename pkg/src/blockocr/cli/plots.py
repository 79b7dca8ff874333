"""Self-contained SVG charts; every chart ships next to a CSV holding the same data."""
from __future__ import annotations

import csv
import io
import math
from html import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")
W, H, PAD = 520, 360, 56


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _frame(title: str, xlabel: str, ylabel: str, x0, x1, y0, y1) -> list[str]:
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           'font-family="sans-serif" font-size="11">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD / 2}" y2="{H - PAD}" stroke="black"/>',
           f'<line x1="{PAD}" y1="{PAD / 2}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - 14}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{H / 2}" text-anchor="middle" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>']
    for v in _ticks(x0, x1):
        x = _sx(v, x0, x1)
        out.append(f'<text x="{x:.1f}" y="{H - PAD + 14}" text-anchor="middle">{v:.3g}</text>')
    for v in _ticks(y0, y1):
        y = _sy(v, y0, y1)
        out.append(f'<text x="{PAD - 4}" y="{y + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    return out


def _sx(v, lo, hi):
    return PAD + (v - lo) / ((hi - lo) or 1.0) * (W - 1.5 * PAD)


def _sy(v, lo, hi):
    return H - PAD - (v - lo) / ((hi - lo) or 1.0) * (H - 1.5 * PAD)


def _bounds(values):
    values = [v for v in values if math.isfinite(v)]
    if not values:
        return 0.0, 1.0
    lo, hi = min(values), max(values)
    if lo == hi:
        lo, hi = lo - 0.5 * (abs(lo) or 1), hi + 0.5 * (abs(hi) or 1)
    margin = 0.05 * (hi - lo)
    return lo - margin, hi + margin


def scatter_svg(series: dict[str, list[tuple[float, float, str]]], title: str, xlabel: str, ylabel: str) -> str:
    """``series`` maps a legend name to ``(x, y, point label)`` triples; one colour per series."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x0, x1 = _bounds(xs)
    y0, y1 = _bounds(ys)
    out = _frame(title, xlabel, ylabel, x0, x1, y0, y1)
    for i, (name, pts) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        cls = escape(name.replace(" ", "_"))
        ordered = sorted(pts)
        if len(ordered) > 1:
            path = " ".join(f"{_sx(x, x0, x1):.1f},{_sy(y, y0, y1):.1f}" for x, y, _ in ordered)
            out.append(f'<polyline class="series-{cls}" points="{path}" fill="none" stroke="{colour}" stroke-opacity="0.5"/>')
        for x, y, label in pts:
            out.append(f'<circle class="series-{cls}" cx="{_sx(x, x0, x1):.1f}" cy="{_sy(y, y0, y1):.1f}" r="4" '
                       f'fill="{colour}"><title>{escape(name)} {escape(label)}: ({x:.4g}, {y:.4g})</title></circle>')
        out.append(f'<rect x="{W - 150}" y="{30 + 16 * i}" width="10" height="10" fill="{colour}"/>'
                   f'<text x="{W - 135}" y="{39 + 16 * i}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def bars_svg(categories: list[str], series: dict[str, list[float]], title: str, xlabel: str, ylabel: str) -> str:
    """Grouped bar chart: one group per category, one bar per series."""
    ymax = max([v for vals in series.values() for v in vals] + [1.0])
    out = _frame(title, xlabel, ylabel, 0, len(categories), 0, ymax)
    group = (W - 1.5 * PAD) / max(len(categories), 1)
    bar = group * 0.8 / max(len(series), 1)
    for g, cat in enumerate(categories):
        out.append(f'<text x="{PAD + group * (g + 0.5):.1f}" y="{H - PAD + 28}" text-anchor="middle">{escape(cat)}</text>')
    for i, (name, vals) in enumerate(series.items()):
        colour = PALETTE[i % len(PALETTE)]
        cls = escape(name.replace(" ", "_"))
        for g, v in enumerate(vals):
            x = PAD + group * g + group * 0.1 + bar * i
            y = _sy(v, 0, ymax)
            out.append(f'<rect class="series-{cls}" x="{x:.1f}" y="{y:.1f}" width="{bar:.1f}" '
                       f'height="{H - PAD - y:.1f}" fill="{colour}"><title>{escape(name)} {escape(categories[g])}: {v:g}</title></rect>')
        out.append(f'<rect x="{W - 150}" y="{30 + 16 * i}" width="10" height="10" fill="{colour}"/>'
                   f'<text x="{W - 135}" y="{39 + 16 * i}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out)


def rows_csv(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def markdown_table(header: list[str], rows: list[list], title: str) -> str:
    fmt = lambda v: f"{v:.4f}" if isinstance(v, float) else str(v)  # noqa: E731
    lines = [f"### {title}", "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(fmt(v) for v in row) + " |" for row in rows]
    return "\n".join(lines) + "\n"
