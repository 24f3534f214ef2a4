"""Regression checks on the shared fixture pipeline runs."""

import csv
import json
import math
from collections import Counter

import pytest

from contxt.config import RunConfig
from contxt.models.checkpoint import load_checkpoint
from contxt.models.transformer import sequence_nll
from contxt.synth_data.sentiment import instruction_sequences, load_corpus


def test_transformer_beats_unigram_on_heldout(fixture_runs, fixture_config):
    out = fixture_runs["a"]["dir"]
    cfg = RunConfig.from_dict(fixture_config, None, None)
    corpus = load_corpus(out / "data" / "sentiment", cfg.corpus_config())
    model = load_checkpoint(out / "models" / "transformer.ckpt")
    train, test = instruction_sequences(corpus, "train"), instruction_sequences(corpus, "test")
    counts = Counter(t for s in train for t in s[1:])
    total = sum(counts.values())
    uni = -sum(math.log(counts[t] / total) for s in test for t in s[1:]) / sum(len(s) - 1 for s in test)
    nll, n = sequence_nll(model, test)
    assert nll / n < 0.5 * uni


def test_grid_numbers_are_frozen(fixture_runs):
    s = json.loads((fixture_runs["a"]["dir"] / "tables" / "grid_summary.json").read_text())
    assert (s["alpha_in"], s["alpha_out"]) == (0.9, 0.8)
    assert s["best_delta"] == pytest.approx(0.2309523809523808, abs=1e-12)
    assert s["report"]["mean_delta"] == pytest.approx(0.23357142857142854, abs=1e-12)


def test_manifest_covers_tree(fixture_runs):
    out = fixture_runs["a"]["dir"]
    manifest = json.loads((out / "manifest.json").read_text())
    files = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert set(manifest["files"]) == files


def test_generation_cell_is_frozen(fixture_runs):
    lines = (fixture_runs["a"]["dir"] / "tables" / "gensweep.csv").read_text().splitlines()
    rows = {(int(r["layer"]), float(r["magnitude"])): r for r in csv.DictReader(lines[1:])}
    cell = rows[(1, 0.5)]
    assert float(cell["flip_rate"]) == 55 / 56  # 44 of 100 outputs undetermined
    assert float(cell["self_bleu"]) == pytest.approx(0.371, abs=5e-4)
    assert all(float(r["flip_rate"]) == 0.0 for (l, m), r in rows.items() if m == 0.0)
