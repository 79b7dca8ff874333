"""Desk-scale reproductions of the ablation tables and figures.

Each bundle writes ``table.csv`` (the data), ``table.md``, one SVG chart, and
``bundle.json`` recording the row/column structure and the profile used.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

from ..decode import SamplerConfig, Strategy
from ..diffusion import Variant
from ..metrics import HIST_EDGES, histogram
from .experiments import DecodeSettings, datasets_for, ensure_checkpoint, eval_subset, evaluate
from .plots import bars_svg, markdown_table, rows_csv, scatter_svg
from .profiles import Profile

log = logging.getLogger(__name__)

EXPERIMENTS = ("table4", "table5", "figB1", "fig5")
TABLE4_ROWS = ("Vanilla+Oracle", "Vanilla", "Vanilla+inference-blocks", "Block", "BlockCausal")
TABLE5_SIZES = {"NONE": (2, 8, 16, 32, 64), "APPROX": (2, 8, 16), "EXACT": (2, 8, 16)}
FIGB1_THRESHOLDS = (0.5, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99)
FIGB1_TOPK = (32, 16, 8, 4, 2, 1)


class Context:
    """Lazily trained/loaded checkpoints and the evaluation documents for one profile."""

    def __init__(self, profile: Profile, root, *, allow_train: bool, limit: int | None = None):
        self.profile = profile
        self.root = Path(root)
        self.allow_train = allow_train
        self.train_set, eval_set = datasets_for(profile)
        self.docs = eval_subset(profile, eval_set, limit)
        self._models = {}

    def model(self, variant: Variant):
        variant = Variant(variant)
        if variant not in self._models:
            self._models[variant] = ensure_checkpoint(self.root, self.profile, variant, allow_train=self.allow_train,
                                                      train_set=self.train_set, progress_every=500)
        return self._models[variant]

    def run(self, variant: Variant, settings: DecodeSettings):
        report, _ = evaluate(self.model(variant), self.docs, settings)
        return report

    def threshold(self) -> SamplerConfig:
        return SamplerConfig(Strategy.CONF_THRESHOLD, threshold=self.profile.threshold)


def _label(profile: Profile) -> str:
    return f"desk-scale reproduction (profile '{profile.name}', synthetic glyph OCR)"


def table4(ctx: Context):
    p = ctx.profile
    canvas = p.vanilla_canvas
    s = ctx.threshold()
    L = p.block_size
    settings = {
        "Vanilla+Oracle": (Variant.VANILLA, DecodeSettings(canvas, sampler=s, max_blocks=1, oracle_length=True)),
        "Vanilla": (Variant.VANILLA, DecodeSettings(canvas, sampler=s, max_blocks=1)),
        "Vanilla+inference-blocks": (Variant.VANILLA, DecodeSettings(L, sampler=s, canvas_length=canvas)),
        "Block": (Variant.BLOCK_BIDIR, DecodeSettings(L, sampler=s)),
        "BlockCausal": (Variant.BLOCK_CAUSAL, DecodeSettings(L, "EXACT", sampler=s)),
    }
    header = ["setting", "NED", "TPS"]
    rows, extra = [], {}
    for name in TABLE4_ROWS:
        variant, st = settings[name]
        r = ctx.run(variant, st)
        rows.append([name, r.mean_ned, r.tps])
        extra[name] = {"variant": variant.value, "decode": st.to_dict(), **r.aggregates()}
    chart = scatter_svg({n: [(r[2], r[1], n)] for n, r in zip(TABLE4_ROWS, rows)},
                        f"Length and block structure: NED vs TPS [{p.name}, desk-scale]", "tokens / second", "mean NED")
    return header, rows, chart, extra


def table5(ctx: Context):
    s = ctx.threshold()
    header = ["block_size", "cache", "NED", "TPS"]
    rows, extra, series = [], {}, {}
    for cache, sizes in TABLE5_SIZES.items():
        variant = Variant.BLOCK_CAUSAL if cache == "EXACT" else Variant.BLOCK_BIDIR
        for L in sizes:
            r = ctx.run(variant, DecodeSettings(L, cache, sampler=s))
            rows.append([L, cache, r.mean_ned, r.tps])
            extra[f"{cache}/{L}"] = {"variant": variant.value, **r.aggregates()}
            series.setdefault(cache, []).append((r.tps, r.mean_ned, f"L'={L}"))
    chart = scatter_svg(series, f"Block size and caching [{ctx.profile.name}, desk-scale]", "tokens / second", "mean NED")
    return header, rows, chart, extra


def figB1(ctx: Context):
    header = ["strategy", "parameter", "NED", "TPS", "median_steps_per_token"]
    L = ctx.profile.block_size
    cells = [("CONF_THRESHOLD", p, SamplerConfig(Strategy.CONF_THRESHOLD, threshold=p)) for p in FIGB1_THRESHOLDS]
    cells += [("CONF_TOPK", k, SamplerConfig(Strategy.CONF_TOPK, k=k)) for k in FIGB1_TOPK]
    cells += [("DUS", "log2", SamplerConfig(Strategy.DUS))]
    rows, extra, series = [], {}, {}
    for strategy, param, sampler in cells:
        r = ctx.run(Variant.BLOCK_BIDIR, DecodeSettings(L, sampler=sampler))
        rows.append([strategy, param, r.mean_ned, r.tps, r.median_steps_per_token])
        extra[f"{strategy}/{param}"] = r.aggregates()
        series.setdefault(strategy, []).append((r.tps, r.mean_ned, f"{param}"))
    chart = scatter_svg(series, f"Edit distance vs speed by sampler [{ctx.profile.name}, desk-scale]",
                        "tokens / second", "mean NED")
    return header, rows, chart, extra


def fig5(ctx: Context):
    ar = ctx.run(Variant.AR_BASELINE, DecodeSettings(ar=True))
    blk = ctx.run(Variant.BLOCK_BIDIR, DecodeSettings(ctx.profile.block_size, sampler=ctx.threshold()))
    counts = {"AR": histogram(d.steps_per_token for d in ar.documents),
              "BlockDiffusion": histogram(d.steps_per_token for d in blk.documents)}
    header = ["bin_lo", "bin_hi", "AR", "BlockDiffusion"]
    rows = [[HIST_EDGES[i], HIST_EDGES[i + 1], counts["AR"][i], counts["BlockDiffusion"][i]]
            for i in range(len(HIST_EDGES) - 1)]
    cats = [f"[{HIST_EDGES[i]:g},{HIST_EDGES[i + 1]:g})" for i in range(len(HIST_EDGES) - 1)]
    chart = bars_svg(cats, {k: [float(c) for c in v] for k, v in counts.items()},
                     f"Steps per token [{ctx.profile.name}, desk-scale]", "forward passes / output token", "documents")
    extra = {"AR": ar.aggregates(), "BlockDiffusion": blk.aggregates()}
    return header, rows, chart, extra


BUILDERS = {"table4": table4, "table5": table5, "figB1": figB1, "fig5": fig5}


def build_bundle(name: str, ctx: Context, directory: Path) -> dict[str, str]:
    header, rows, chart, extra = BUILDERS[name](ctx)
    directory.mkdir(parents=True, exist_ok=True)
    label = _label(ctx.profile)
    (directory / "table.csv").write_text(rows_csv(header, rows))
    (directory / "table.md").write_text(markdown_table(header, rows, f"{name}: {label}"))
    (directory / "chart.svg").write_text(chart)
    meta = {"experiment": name, "label": label, "profile": ctx.profile.name, "columns": header,
            "rows": [r[0] if name != "table5" else f"{r[1]}/{r[0]}" for r in rows],
            "num_documents": len(ctx.docs), "details": extra}
    (directory / "bundle.json").write_text(json.dumps(meta, indent=2, default=str))
    return {"table_csv": "table.csv", "table_md": "table.md", "chart": "chart.svg", "bundle": "bundle.json"}
