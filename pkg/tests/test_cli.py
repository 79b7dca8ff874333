import csv
import io
import json
from pathlib import Path

import pytest
import torch

from blockocr.cli.main import main
from blockocr.cli.runs import load_manifest
from blockocr.nn import init_model, load_checkpoint
from blockocr.synth import load_dataset

TINY = {
    "profile": "small",
    "dataset": {"vocab_size": 8, "min_len": 4, "max_len": 10, "num_train": 6, "num_eval": 4, "seed": 3},
    "model": {"embed_dim": 16, "num_heads": 2, "num_layers": 1, "text_capacity": 32},
    "training": {"batch_size": 2, "total_steps": 3, "warmup_steps": 1, "decay_steps": 1, "block_size": 4},
}


@pytest.fixture
def env(tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    out = tmp_path / "runs"
    return cfg, out


def run(capsys, *argv):
    code = main([*map(str, argv), "--quiet"])
    return code, capsys.readouterr()


def gen(capsys, cfg, out):
    code, io_ = run(capsys, "gen", "--config", cfg, "--out-dir", out)
    assert code == 0
    train, ev = io_.out.split()[:2]
    return Path(train), Path(ev)


def train(capsys, cfg, out, data, *extra):
    code, io_ = run(capsys, "train", "--config", cfg, "--out-dir", out, "--dataset", data, *extra)
    assert code == 0, io_.err
    return Path(io_.out.split()[-1])


def test_gen_is_deterministic(env, capsys, tmp_path):
    cfg, out = env
    a_train, a_eval = gen(capsys, cfg, out)
    first = a_train.read_bytes(), a_eval.read_bytes()
    run_a = load_manifest(a_train.parent)["run_id"]
    b_train, b_eval = gen(capsys, cfg, tmp_path / "other")
    assert (b_train.read_bytes(), b_eval.read_bytes()) == first
    assert load_manifest(b_train.parent)["run_id"] != run_a
    m = load_manifest(b_train.parent)
    assert m["status"] == "complete" and m["code_version"] and m["finished"]
    assert len(load_dataset(a_train)) == 6 and len(load_dataset(a_eval)) == 4


def test_seed_changes_gen_dir(env, capsys):
    cfg, out = env
    a, _ = gen(capsys, cfg, out)
    code, io_ = run(capsys, "gen", "--config", cfg, "--out-dir", out, "--seed", 9)
    assert code == 0 and Path(io_.out.split()[0]).parent != a.parent


@pytest.mark.parametrize("patch, key", [
    ({"bogus": 1}, "bogus"),
    ({"training": {"learning_rate": 1}}, "learning_rate"),
    ({"dataset": {"vocab": 3}}, "vocab"),
])
def test_unknown_config_key(env, capsys, patch, key):
    cfg, out = env
    cfg.write_text(json.dumps({**TINY, **patch}))
    code, io_ = run(capsys, "gen", "--config", cfg, "--out-dir", out)
    assert code == 2 and key in io_.err
    assert not out.exists()


def test_train_zero_steps_is_init(env, capsys):
    cfg, out = env
    data, _ = gen(capsys, cfg, out)
    ckpt = train(capsys, cfg, out, data, "--steps", 0, "--variant", "BLOCK_CAUSAL")
    model = load_checkpoint(ckpt)
    fresh = init_model(model.config, model.regime)
    assert model.step_count == 0
    for k, v in fresh.params.items():
        assert torch.equal(v, model.params[k]), k
    assert (ckpt.parent / "loss.csv").read_text().strip() == "step,lr,loss,wall_clock_ms"


def test_train_and_resume(env, capsys):
    cfg, out = env
    data, _ = gen(capsys, cfg, out)
    ckpt = train(capsys, cfg, out, data)
    log = list(csv.DictReader(io.StringIO((ckpt.parent / "loss.csv").read_text())))
    assert [int(r["step"]) for r in log] == [1, 2, 3]
    resumed = train(capsys, cfg, out, data, "--steps", 5, "--resume", ckpt)
    log2 = list(csv.DictReader(io.StringIO((resumed.parent / "loss.csv").read_text())))
    assert [int(r["step"]) for r in log2] == [4, 5]
    assert load_checkpoint(resumed).step_count == 5


def test_train_rejects_mismatched_dataset(env, capsys, tmp_path):
    cfg, out = env
    data, _ = gen(capsys, cfg, out)
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**TINY, "dataset": {**TINY["dataset"], "vocab_size": 12}}))
    code, io_ = run(capsys, "train", "--config", other, "--out-dir", out, "--dataset", data)
    assert code == 2


def test_decode_cache_regime_error(env, capsys):
    cfg, out = env
    data, ev = gen(capsys, cfg, out)
    ckpt = train(capsys, cfg, out, data, "--steps", 0)  # BLOCK_BIDIR
    before = set(out.iterdir())
    code, io_ = run(capsys, "decode", "--config", cfg, "--out-dir", out, "--checkpoint", ckpt, "--dataset", ev,
                    "--cache", "exact")
    assert code == 3 and "EXACT" in io_.err and "BIDIRECTIONAL" in io_.err
    assert set(out.iterdir()) == before
    code, io_ = run(capsys, "decode", "--config", cfg, "--out-dir", out, "--checkpoint", ckpt, "--dataset", ev, "--ar")
    assert code == 3


def test_decode_oracle_outputs(env, capsys):
    cfg, out = env
    _, ev = gen(capsys, cfg, out)
    code, io_ = run(capsys, "decode", "--config", cfg, "--out-dir", out, "--oracle-denoiser", "--dataset", ev,
                    "--threshold", 0.5, "--heatmaps", 2)
    assert code == 0
    d = Path(io_.out.split()[-1])
    report = json.loads((d / "report.json").read_text())
    assert report["mean_ned"] == 0
    assert sorted(p.name for p in (d / "traces").iterdir())[:2] == ["doc_0000.commit.json", "doc_0000.jsonl"]
    assert len(list((d / "traces").glob("*.jsonl"))) == 4
    assert len(list((d / "heatmaps").glob("*.svg"))) == 2
    rows = list(csv.DictReader(io.StringIO((d / "report.csv").read_text())))
    assert len(rows) == 4 and all(float(r["ned"]) == 0 for r in rows)
    assert load_manifest(d)["status"] == "complete"


def test_ar_matches_block_one(env, capsys):
    cfg, out = env
    data, ev = gen(capsys, cfg, out)
    ckpt = train(capsys, cfg, out, data, "--variant", "AR_BASELINE")
    reports = []
    for extra in (["--ar"], ["--block-size", 1, "--topk", 1, "--cache", "exact"]):
        code, io_ = run(capsys, "decode", "--config", cfg, "--out-dir", out, "--checkpoint", ckpt, "--dataset", ev,
                        "--max-blocks", 12, *extra)
        assert code == 0, io_.err
        reports.append(json.loads((Path(io_.out.split()[-1]) / "report.json").read_text()))
    for da, db in zip(reports[0]["documents"], reports[1]["documents"]):
        for k in ("ned", "forward_passes", "tokens_out", "steps_per_token"):
            assert da[k] == db[k], k


def _sweep(capsys, cfg, out, spec_dict, tmp_path, *extra):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(spec_dict))
    return run(capsys, "sweep", "--config", cfg, "--out-dir", out, "--spec", spec, *extra)


def test_sweep_grid(env, capsys, tmp_path):
    cfg, out = env
    _, ev = gen(capsys, cfg, out)
    spec = {"dataset": str(ev), "oracle_denoiser": True, "axes": {"block_size": [2, 4], "threshold": [0.5, 0.9]}}
    code, io_ = _sweep(capsys, cfg, out, spec, tmp_path)
    assert code == 0, io_.err
    combined = Path(io_.out.split()[-1])
    rows = list(csv.DictReader(io.StringIO(combined.read_text())))
    assert len(rows) == 4
    assert {(r["block_size"], r["threshold"]) for r in rows} == {("2", "0.5"), ("2", "0.9"), ("4", "0.5"), ("4", "0.9")}
    cells = list((combined.parent / "cells").iterdir())
    assert len(cells) == 4 and all(load_manifest(c)["status"] == "complete" for c in cells)
    assert (combined.parent / "scatter.svg").exists()
    # rerun resumes from complete cells
    stamps = {c: load_manifest(c)["finished"] for c in cells}
    code, _ = _sweep(capsys, cfg, out, spec, tmp_path)
    assert code == 0 and {c: load_manifest(c)["finished"] for c in cells} == stamps


def test_sweep_refuses_oversize(env, capsys, tmp_path):
    cfg, out = env
    _, ev = gen(capsys, cfg, out)
    spec = {"dataset": str(ev), "oracle_denoiser": True, "max_cells": 3,
            "axes": {"block_size": [2, 4], "threshold": [0.5, 0.9]}}
    before = set(out.iterdir())
    code, io_ = _sweep(capsys, cfg, out, spec, tmp_path)
    assert code == 2 and "4 cells" in io_.err
    assert set(out.iterdir()) == before


def test_sweep_parallel_matches_serial(env, capsys, tmp_path):
    cfg, out = env
    _, ev = gen(capsys, cfg, out)
    spec = {"dataset": str(ev), "oracle_denoiser": True, "axes": {"block_size": [2, 3]}}
    _, a = _sweep(capsys, cfg, out, spec, tmp_path)
    _, b = _sweep(capsys, cfg, tmp_path / "p", spec, tmp_path, "--workers", 2)
    strip = lambda p: [{k: v for k, v in r.items() if k != "tps"} for r in csv.DictReader(io.StringIO(Path(p).read_text()))]
    assert strip(a.out.split()[-1]) == strip(b.out.split()[-1])


def test_repro_unknown_experiment(capsys):
    with pytest.raises(SystemExit) as e:
        main(["repro", "table9"])
    assert e.value.code != 0


def test_repro_missing_checkpoint(env, capsys):
    cfg, out = env
    code, io_ = run(capsys, "repro", "table4", "--config", cfg, "--out-dir", out, "--limit", 1)
    assert code == 4 and "--train" in io_.err
