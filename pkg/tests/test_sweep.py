import numpy as np
import pytest

from contxt.engine import ContextCache
from contxt.errors import CacheMissError, ConfigError
from contxt.metrics import accuracy
from contxt.sweep import (
    GridSweepConfig,
    SweepResult,
    _select,
    domain_delta_at_optimum,
    emit_tables,
    grid_table,
    prepare_classifier_contexts,
    removal_label,
    run_grid_sweep,
)
from contxt.synth_data.domain_shift import DomainShiftConfig, gen_domain_shift
from contxt.models.mlp import MlpTrainConfig, train_mlp


@pytest.fixture(scope="module")
def setup(shift_data, small_mlp):
    cache = prepare_classifier_contexts(small_mlp, shift_data, 1)
    return small_mlp, shift_data, cache


COARSE = (0.0, 0.5, 1.0)


def test_baseline_only_grid(setup):
    model, ds, cache = setup
    res = run_grid_sweep(model, ds, GridSweepConfig(inject=(0.0,), remove=(0.0,)), cache)
    assert res.deltas.shape == (1, 1) and res.deltas[0, 0] == 0.0
    base = accuracy(model, ds.val)
    assert res.values[0, 0] == pytest.approx(np.mean(list(base.values())), abs=0)
    assert list(res.per_domain[0, 0]) == [base[k] for k in range(4)]


def test_workers_and_order_do_not_matter(setup):
    model, ds, cache = setup
    a = run_grid_sweep(model, ds, GridSweepConfig(inject=COARSE, remove=COARSE), cache)
    b = run_grid_sweep(model, ds, GridSweepConfig(inject=COARSE, remove=COARSE, workers=3), cache)
    assert a.values.tobytes() == b.values.tobytes() and a.argmax == b.argmax
    rev = run_grid_sweep(model, ds, GridSweepConfig(inject=COARSE[::-1], remove=COARSE[::-1]), cache)
    assert rev.values[::-1, ::-1].tobytes() == a.values.tobytes()
    assert rev.best_strengths == a.best_strengths


def test_tie_break_prefers_minimal_intervention():
    d = np.array([[0.0, 0.1, 0.1], [0.1, 0.05, 0.1], [0.1, 0.1, 0.1]])
    assert _select(d, (0.0, 0.5, 1.0), (0.0, 0.5, 1.0)) == (0, 1)
    # strengths listed out of order still resolve by value
    assert _select(d, (1.0, 0.5, 0.0), (0.0, 0.5, 1.0)) == (0, 2)


def test_config_validation():
    with pytest.raises(ConfigError):
        GridSweepConfig(inject=(0.5,)).validate()
    with pytest.raises(ConfigError):
        GridSweepConfig(remove=(0.0, -0.1)).validate()
    with pytest.raises(ConfigError):
        GridSweepConfig(workers=0).validate()


def test_missing_context_surfaces_as_cache_miss(setup):
    model, ds, _ = setup
    with pytest.raises(CacheMissError):
        run_grid_sweep(model, ds, GridSweepConfig(inject=COARSE, remove=COARSE), ContextCache())


def test_removal_contexts_come_from_validation(setup):
    model, ds, cache = setup
    ctx = cache.get(1, removal_label(2))
    assert ctx.sample_count == len(ds.val.for_domain(2))
    capped = prepare_classifier_contexts(model, ds, 1, removal_samples=10)
    assert capped.get(1, removal_label(2)).sample_count == 10


def test_emit_tables(tmp_path, setup):
    model, ds, cache = setup
    res = run_grid_sweep(model, ds, GridSweepConfig(inject=(0.0, 1.0), remove=(0.0, 1.0)), cache)
    text = grid_table(res)
    lines = text.splitlines()
    assert lines[0].startswith("# contxt-grid config_digest=")
    assert len(lines) == 2 + 4
    (p1,) = emit_tables(res, tmp_path / "a")
    (p2,) = emit_tables(res, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()
    with pytest.raises(TypeError):
        emit_tables(object(), tmp_path)


def test_null_shift_optimum_has_no_domain_gaps():
    ds = gen_domain_shift(DomainShiftConfig(shift=0.0, test_per_class=100, seed=2))
    m = train_mlp(ds.train.X, ds.train.y, MlpTrainConfig(epochs=10, seed=0), n_classes=7)
    cache = prepare_classifier_contexts(m, ds, 1)
    res = run_grid_sweep(m, ds, GridSweepConfig(inject=COARSE, remove=COARSE), cache)
    rep = domain_delta_at_optimum(res, m, ds, cache)
    sd = np.sqrt(0.25 / 700)
    assert all(abs(d) <= 6 * sd for d in rep.deltas.values())
    assert sum(rep.deltas.values()) == pytest.approx(rep.mean_delta * 4, abs=1e-15)


def test_generation_sweep_schema_and_identity_cell(tmp_path):
    from contxt.models.transformer import TinyTransformer, generate
    from contxt.sweep import GenSweepConfig, generation_table, prepare_phrase_contexts, run_generation_sweep
    from contxt.synth_data.sentiment import SentimentConfig, gen_sentiment_corpus, prompt_tokens
    from contxt.tensor_core import SeededRng

    corpus = gen_sentiment_corpus(SentimentConfig(size=20, seed=0))
    model = TinyTransformer.initialize(len(corpus.vocab), SeededRng(0), width=8, n_layers=2, n_heads=2,
                                       context_length=32)
    cfg = GenSweepConfig(layers=(0, 1), magnitudes=(0.0, 0.5), n_prompts=4, max_tokens=3)
    cache = prepare_phrase_contexts(model, corpus.vocab, cfg)
    res = run_generation_sweep(model, cfg, corpus, cache)
    assert sorted(res.cells) == [(0, 0.0), (0, 0.5), (1, 0.0), (1, 0.5)]
    for i, (s, _) in enumerate(corpus.split("test")[:4]):
        plain = corpus.vocab.decode(generate(model, corpus.vocab.encode(prompt_tokens(s)), 3,
                                             stop_token=corpus.vocab.eos))
        assert res.cells[(0, 0.0)].records[i].output == plain
        assert res.cells[(1, 0.0)].records[i].output == plain
    rows = generation_table(res).splitlines()
    assert rows[1] == "layer,magnitude,flip_rate,self_bleu,undetermined,determined,n"
    assert len(rows) == 2 + 4
    paths = emit_tables(res, tmp_path)
    assert [p.name for p in paths] == ["gensweep.csv", "gensweep_records.jsonl"]
    assert len(paths[1].read_text().splitlines()) == 4 * 4
    twice = run_generation_sweep(model, GenSweepConfig(layers=(0, 1), magnitudes=(0.0, 0.5), n_prompts=4,
                                                       max_tokens=3, workers=2), corpus, cache)
    assert generation_table(twice).splitlines()[2:] == rows[2:]
