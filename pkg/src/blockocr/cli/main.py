"""``blockocr`` command-line entry point.

Config precedence, lowest to highest: profile defaults, ``--config`` JSON
file, command-line flags.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import torch

from ..decode import CacheMode, check_cache_mode
from ..diffusion import Variant, train
from ..errors import ConfigError, FormatError, RegimeError
from ..metrics import commit_heatmap, heatmap_svg, report_dict
from ..nn import init_model, load_checkpoint
from ..synth import load_dataset, save_dataset, generate
from . import repro
from .experiments import DecodeSettings, evaluate
from .plots import rows_csv, scatter_svg
from .profiles import PROFILES, Profile, get_profile
from .runs import RunManifest, file_hash, finish, is_complete, run_dir, write_manifest

log = logging.getLogger("blockocr")

EXIT_OK, EXIT_CONFIG, EXIT_REGIME, EXIT_RUNTIME = 0, 2, 3, 4
DEFAULT_MAX_CELLS = 512
CONFIG_SECTIONS = {"profile", "dataset", "model", "training", "decode", "sweep"}
MODEL_KEYS = {"embed_dim", "num_heads", "num_layers", "text_capacity"}
TRAINING_KEYS = {"variant", "total_steps", "warmup_steps", "decay_steps", "batch_size", "peak_lr", "schedule",
                 "block_size", "checkpoint_every", "threshold", "eval_docs"}


@dataclass
class Resolved:
    profile: Profile
    variant: Variant
    checkpoint_every: int
    decode: dict
    sweep: dict


def _check_keys(section: str, d: dict, allowed: set):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown config key {section}.{sorted(unknown)[0]}")


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(raw) - CONFIG_SECTIONS
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]!r}; valid sections: {sorted(CONFIG_SECTIONS)}")
    return raw


def resolve(raw: dict, profile_name: str | None = None, seed: int | None = None) -> Resolved:
    profile = get_profile(profile_name or raw.get("profile", "desk"))
    model = raw.get("model", {})
    training = dict(raw.get("training", {}))
    _check_keys("model", model, MODEL_KEYS)
    _check_keys("training", training, TRAINING_KEYS)
    variant = training.pop("variant", "BLOCK_BIDIR")
    every = training.pop("checkpoint_every", 0)
    overrides = {**model, **training}
    if "dataset" in raw:
        _check_keys("dataset", raw["dataset"], set(profile.dataset.__dataclass_fields__))
        overrides["dataset"] = raw["dataset"]
    try:
        profile = profile.with_overrides(overrides)
        variant = Variant(variant)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e
    if seed is not None:
        profile = replace(profile, seed=seed, dataset=replace(profile.dataset, seed=seed))
    return Resolved(profile, variant, int(every), dict(raw.get("decode", {})), dict(raw.get("sweep", {})))


def _decode_settings(base: dict, args, profile: Profile) -> DecodeSettings:
    d = {"block_size": profile.block_size, "sampler": {"threshold": profile.threshold}}
    d.update({k: v for k, v in base.items() if k != "sampler"})
    sampler = {**d["sampler"], **base.get("sampler", {})}
    if args.block_size is not None:
        d["block_size"] = args.block_size
    if args.cache is not None:
        d["cache_mode"] = args.cache.upper()
    if args.max_blocks is not None:
        d["max_blocks"] = args.max_blocks
    if args.oracle_length:
        d["oracle_length"] = True
    if args.canvas_length is not None:
        d["canvas_length"] = args.canvas_length
    if args.ar:
        d["ar"] = True
    if args.seed is not None:
        d["seed"] = args.seed
    if args.threshold is not None:
        sampler.update(strategy="CONF_THRESHOLD", threshold=args.threshold)
    if args.topk is not None:
        sampler.update(strategy="CONF_TOPK", k=args.topk)
    if args.dus:
        sampler.update(strategy="DUS")
    if args.random is not None:
        sampler.update(strategy="RANDOM", k=args.random)
    if args.sample:
        sampler["greedy"] = False
    if args.greedy:
        sampler["greedy"] = True
    if args.max_steps is not None:
        sampler["max_steps_per_block"] = args.max_steps
    d["sampler"] = sampler
    return DecodeSettings.from_dict(d)


# ---- commands -------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = resolve(load_config(args.config), args.profile, args.seed)
    ds_cfg = cfg.profile.dataset
    config = {"dataset": ds_cfg.to_dict()}
    out = run_dir(args.out_dir, "gen", config)
    manifest = RunManifest("gen", config)
    write_manifest(manifest, out)
    train_set, eval_set = generate(ds_cfg)
    save_dataset(train_set, out / "train.bocd")
    save_dataset(eval_set, out / "eval.bocd")
    manifest.artifacts.update(train="train.bocd", eval="eval.bocd")
    finish(manifest, out)
    print(out / "train.bocd")
    print(out / "eval.bocd")
    return EXIT_OK


def cmd_train(args) -> int:
    raw = load_config(args.config)
    if args.variant:
        raw.setdefault("training", {})["variant"] = args.variant
    if args.steps is not None:
        raw.setdefault("training", {})["total_steps"] = args.steps
    cfg = resolve(raw, args.profile, args.seed)
    dataset = load_dataset(args.dataset)
    if dataset.config.model_vocab_size != cfg.profile.dataset.model_vocab_size or \
            dataset.config.max_patches > cfg.profile.dataset.max_patches:
        raise ConfigError("dataset does not match the profile's vocabulary or page size; pass the same --config used for gen")
    tcfg = replace(cfg.profile.training_config(cfg.variant), checkpoint_every=cfg.checkpoint_every)
    mcfg = cfg.profile.model_config()
    config = {"model": mcfg.to_dict(), "training": tcfg.to_dict(),
              "dataset": file_hash(args.dataset)}
    out = run_dir(args.out_dir, "train", config)
    if args.resume:
        model = load_checkpoint(args.resume)
        if model.config != mcfg:
            raise ConfigError("resume checkpoint was trained with a different model config")
    else:
        model = init_model(mcfg, cfg.profile.regime(cfg.variant))
    manifest = RunManifest("train", {**config, "resume": str(args.resume) if args.resume else None})
    write_manifest(manifest, out)
    train(tcfg, dataset, model, log_path=out / "loss.csv", checkpoint_dir=out,
          progress_every=0 if args.quiet else max(1, tcfg.total_steps // 20))
    manifest.artifacts.update(checkpoint="final.ckpt", loss_log="loss.csv")
    if not (out / "loss.csv").exists():
        (out / "loss.csv").write_text("step,lr,loss,wall_clock_ms\n")
    for p in sorted(out.glob("step_*.ckpt")):
        manifest.artifacts[p.stem] = p.name
    finish(manifest, out)
    print(out / "final.ckpt")
    return EXIT_OK


def cmd_decode(args) -> int:
    raw = load_config(args.config)
    cfg = resolve(raw, args.profile, None)
    settings = _decode_settings(cfg.decode, args, cfg.profile)
    dataset = load_dataset(args.dataset)
    docs = list(dataset)[: args.limit] if args.limit else list(dataset)
    if args.oracle_denoiser:
        model = None
    else:
        if not args.checkpoint:
            raise ConfigError("decode needs --checkpoint (or --oracle-denoiser)")
        model = load_checkpoint(args.checkpoint)
        if model.config.vocab_size != dataset.config.model_vocab_size:
            raise ConfigError("checkpoint vocabulary does not match the dataset")
        if settings.ar:
            if model.regime.tag.value != "FULL_CAUSAL":
                raise RegimeError(f"--ar needs a FULL_CAUSAL checkpoint, this one is {model.regime.tag.value}")
        else:
            check_cache_mode(model.regime, CacheMode(settings.cache_mode))
    config = {"decode": settings.to_dict(), "oracle_denoiser": bool(args.oracle_denoiser),
              "checkpoint": file_hash(args.checkpoint) if args.checkpoint else None,
              "dataset": file_hash(args.dataset), "limit": args.limit}
    out = run_dir(args.out_dir, "decode", config)
    manifest = RunManifest("decode", {**config, "checkpoint_path": args.checkpoint, "dataset_path": args.dataset})
    write_manifest(manifest, out)
    report, traces = evaluate(model, docs, settings, oracle=bool(args.oracle_denoiser),
                              eos_id=dataset.config.eos_id, num_outputs=dataset.config.model_vocab_size - 1)
    (out / "traces").mkdir(exist_ok=True)
    (out / "heatmaps").mkdir(exist_ok=True)
    for i, tr in enumerate(traces):
        (out / "traces" / f"doc_{i:04d}.jsonl").write_text(tr.to_jsonl())
        (out / "traces" / f"doc_{i:04d}.commit.json").write_text(tr.commit_map_json())
        if i < args.heatmaps:
            grid = commit_heatmap(tr, args.line_width)
            (out / "heatmaps" / f"doc_{i:04d}.svg").write_text(heatmap_svg(grid))
            (out / "heatmaps" / f"doc_{i:04d}.json").write_text(json.dumps({"trace_version": 1, "grid": grid}))
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(json.dumps(report_dict(report), indent=2))
    manifest.artifacts.update(report_csv="report.csv", report_json="report.json", traces="traces", heatmaps="heatmaps")
    finish(manifest, out)
    agg = report.aggregates()
    print(f"docs {agg['num_documents']}  mean NED {agg['mean_ned']:.4f}  exact {agg['exact_match']:.3f}  "
          f"TPS {agg['tps']:.1f}  median steps/token {agg['median_steps_per_token']:.4f}")
    print(out)
    return EXIT_OK


# ---- sweeps ---------------------------------------------------------------

SAMPLER_AXES = {"strategy", "threshold", "k", "greedy", "max_steps_per_block"}
SETTING_AXES = {"block_size", "cache_mode", "max_blocks", "oracle_length", "canvas_length", "ar"}
SWEEP_KEYS = {"checkpoint", "dataset", "oracle_denoiser", "base", "axes", "seeds", "max_cells", "limit"}

_CELL_CACHE: dict = {}


def sweep_cells(spec: dict) -> list[dict]:
    axes = spec.get("axes", {})
    bad = set(axes) - SAMPLER_AXES - SETTING_AXES
    if bad:
        raise ConfigError(f"unknown sweep axis {sorted(bad)[0]!r}")
    names = list(axes)
    cells = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    limit = spec.get("max_cells", DEFAULT_MAX_CELLS)
    if len(cells) > limit:
        raise ConfigError(f"sweep has {len(cells)} cells, bound is {limit}")
    return cells


def cell_settings(base: dict, cell: dict, seed: int) -> DecodeSettings:
    d = {k: v for k, v in base.items() if k != "sampler"}
    sampler = dict(base.get("sampler", {}))
    for k, v in cell.items():
        (sampler if k in SAMPLER_AXES else d)[k] = v
    d["sampler"] = sampler
    d["seed"] = seed
    return DecodeSettings.from_dict(d)


def _run_cell(job: dict) -> list[dict]:
    """Decode one sweep cell for every seed; skipped if its directory is already complete."""
    torch.set_num_threads(1)
    out = Path(job["dir"])
    if is_complete(out):
        return json.loads((out / "rows.json").read_text())
    key = (job["checkpoint"], job["dataset"])
    if key not in _CELL_CACHE:
        model = load_checkpoint(job["checkpoint"]) if job["checkpoint"] else None
        _CELL_CACHE[key] = (model, load_dataset(job["dataset"]))
    model, dataset = _CELL_CACHE[key]
    docs = list(dataset)[: job["limit"]] if job["limit"] else list(dataset)
    manifest = RunManifest("sweep-cell", job["config"])
    write_manifest(manifest, out)
    rows = []
    for seed in job["seeds"]:
        settings = cell_settings(job["base"], job["cell"], seed)
        if model is not None and not settings.ar:
            check_cache_mode(model.regime, CacheMode(settings.cache_mode))
        report, _ = evaluate(model, docs, settings, oracle=job["oracle"], eos_id=dataset.config.eos_id,
                             num_outputs=dataset.config.model_vocab_size - 1)
        (out / f"report_seed{seed}.csv").write_text(report.to_csv())
        (out / f"report_seed{seed}.json").write_text(json.dumps(report_dict(report), indent=2))
        manifest.artifacts[f"report_seed{seed}"] = f"report_seed{seed}.json"
        rows.append({"cell": job["index"], **job["cell"], "seed": seed, "strategy": settings.sampler.strategy.value,
                     "mean_ned": report.mean_ned, "tps": report.tps, "exact_match": report.exact_match,
                     "median_steps_per_token": report.median_steps_per_token})
    (out / "rows.json").write_text(json.dumps(rows))
    manifest.artifacts["rows"] = "rows.json"
    finish(manifest, out)
    return rows


def cmd_sweep(args) -> int:
    raw = load_config(args.config)
    spec = dict(raw.get("sweep", {}))
    if args.spec:
        try:
            spec.update(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read sweep spec {args.spec}: {e}") from e
    _check_keys("sweep", spec, SWEEP_KEYS)
    if args.checkpoint:
        spec["checkpoint"] = args.checkpoint
    if args.dataset:
        spec["dataset"] = args.dataset
    if args.max_cells is not None:
        spec["max_cells"] = args.max_cells
    cells = sweep_cells(spec)  # refuses oversize sweeps before any work
    if not spec.get("dataset"):
        raise ConfigError("sweep needs a dataset")
    oracle = bool(spec.get("oracle_denoiser"))
    if not oracle and not spec.get("checkpoint"):
        raise ConfigError("sweep needs a checkpoint (or oracle_denoiser: true)")
    seeds = list(spec.get("seeds", [args.seed if args.seed is not None else 0]))
    base = dict(spec.get("base", {}))
    # validate every cell up front so a bad axis value fails before the first decode
    for c in cells:
        for s in seeds:
            cell_settings(base, c, s)
    ckpt = spec.get("checkpoint")
    if ckpt and not oracle:
        regime = load_checkpoint(ckpt).regime
        for c in cells:
            st = cell_settings(base, c, seeds[0])
            if not st.ar:
                check_cache_mode(regime, CacheMode(st.cache_mode))
    ident = {"checkpoint": file_hash(ckpt) if ckpt else None,
             "dataset": file_hash(spec["dataset"]), "oracle": oracle,
             "limit": spec.get("limit")}
    sweep_config = {**ident, "base": base, "axes": spec.get("axes", {}), "seeds": seeds}
    out = run_dir(args.out_dir, "sweep", sweep_config)
    manifest = RunManifest("sweep", {**sweep_config, "checkpoint_path": ckpt, "dataset_path": spec["dataset"]})
    write_manifest(manifest, out)
    jobs = []
    for i, cell in enumerate(cells):
        cfg = {**ident, "base": base, "cell": cell, "seeds": seeds}
        jobs.append({"index": i, "cell": cell, "seeds": seeds, "base": base, "checkpoint": ckpt if not oracle else None,
                     "dataset": spec["dataset"], "oracle": oracle, "limit": spec.get("limit"), "config": cfg,
                     "dir": str(run_dir(out / "cells", f"cell{i:03d}", cfg))})
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [r for cell_rows in results for r in cell_rows]  # deterministic cell order
    axes = list(spec.get("axes", {}))
    header = ["cell", *axes, "seed", "strategy", "mean_ned", "tps", "exact_match", "median_steps_per_token", "run_dir"]
    table = [[r["cell"], *[r[a] for a in axes], r["seed"], r["strategy"], f"{r['mean_ned']:.6f}", f"{r['tps']:.3f}",
              f"{r['exact_match']:.4f}", f"{r['median_steps_per_token']:.6f}",
              str(Path(jobs[r["cell"]]["dir"]).relative_to(out))] for r in rows]
    (out / "combined.csv").write_text(rows_csv(header, table))
    series: dict[str, list] = {}
    for r in rows:
        label = ",".join(f"{a}={r[a]}" for a in axes)
        series.setdefault(r["strategy"], []).append((r["tps"], r["mean_ned"], label))
    (out / "scatter.svg").write_text(scatter_svg(series, "NED vs TPS", "tokens / second", "mean NED"))
    manifest.artifacts.update(combined_csv="combined.csv", scatter="scatter.svg")
    for j in jobs:
        manifest.artifacts[f"cell{j['index']:03d}"] = str(Path(j["dir"]).relative_to(out))
    finish(manifest, out)
    print(out / "combined.csv")
    return EXIT_OK


def cmd_repro(args) -> int:
    cfg = resolve(load_config(args.config), args.profile or "desk", args.seed)
    ctx = repro.Context(cfg.profile, args.out_dir, allow_train=args.train, limit=args.limit)
    config = {"experiment": args.experiment, "profile": cfg.profile.to_dict(), "limit": args.limit}
    out = run_dir(Path(args.out_dir) / "repro", args.experiment, config)
    manifest = RunManifest("repro", config)
    write_manifest(manifest, out)
    manifest.artifacts.update(repro.build_bundle(args.experiment, ctx, out))
    finish(manifest, out)
    print((out / "table.md").read_text())
    print(out)
    return EXIT_OK


# ---- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", help="JSON config file (sections: profile, dataset, model, training, decode, sweep)")
    g.add_argument("--seed", type=int, default=None, help="override the seed")
    g.add_argument("--out-dir", default="runs", help="root for run directories (default: ./runs)")
    g.add_argument("--workers", type=int, default=1, help="parallel sweep cells")
    g.add_argument("--quiet", action="store_true", help="only warnings and errors")
    g.add_argument("--profile", choices=sorted(PROFILES), default=None, help="base profile (default: desk)")

    parser = argparse.ArgumentParser(prog="blockocr", description="Block discrete-diffusion transcription harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate train/eval dataset files")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train one variant")
    p.add_argument("--dataset", required=True, help="training split file")
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--steps", type=int, help="total optimizer steps")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", parents=[common], help="decode a dataset and report metrics")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--oracle-denoiser", action="store_true", help="use the ground-truth posterior instead of a model")
    p.add_argument("--ar", action="store_true", help="greedy autoregressive baseline (FULL_CAUSAL checkpoints)")
    p.add_argument("--block-size", type=int)
    p.add_argument("--cache", choices=["none", "approx", "exact", "NONE", "APPROX", "EXACT"])
    s = p.add_mutually_exclusive_group()
    s.add_argument("--threshold", type=float, help="CONF_THRESHOLD with this p")
    s.add_argument("--topk", type=int, help="CONF_TOPK with this k")
    s.add_argument("--dus", action="store_true", help="dilated unmasking schedule")
    s.add_argument("--random", type=int, metavar="K", help="K uniformly random positions per pass")
    v = p.add_mutually_exclusive_group()
    v.add_argument("--greedy", action="store_true", help="commit argmax values (default)")
    v.add_argument("--sample", action="store_true", help="commit categorical draws")
    p.add_argument("--max-blocks", type=int)
    p.add_argument("--max-steps", type=int, help="forward passes allowed per block")
    p.add_argument("--oracle-length", action="store_true", help="canvas = true length, EOS disabled")
    p.add_argument("--canvas-length", type=int, help="materialize a fixed canvas every pass")
    p.add_argument("--limit", type=int, help="decode only the first N documents")
    p.add_argument("--heatmaps", type=int, default=4, help="commit-order heatmaps for the first N documents")
    p.add_argument("--line-width", type=int, default=16, help="heatmap row width")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("sweep", parents=[common], help="grid of decode runs")
    p.add_argument("--spec", help="sweep spec JSON (merged over the config's sweep section)")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--max-cells", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("repro", parents=[common], help="desk-scale table/figure bundle")
    p.add_argument("experiment", choices=repro.EXPERIMENTS)
    p.add_argument("--train", action="store_true", help="train missing checkpoints")
    p.add_argument("--limit", type=int, help="evaluate only the first N eval documents")
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeError as e:
        print(f"incompatible: {e}", file=sys.stderr)
        return EXIT_REGIME
    except (FormatError, OSError, RuntimeError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
