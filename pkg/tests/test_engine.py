import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from contxt.engine import (
    LAST_TOKEN,
    MEAN_OF_PHRASES,
    ContextCache,
    ContextVector,
    SteeringIndex,
    SteeringSpec,
    apply_steering,
    cache_get,
    cache_load,
    cache_put,
    cache_save,
    extract_mean_context,
    extract_mean_phrase_context,
    extract_phrase_context,
    make_classifier_spec,
)
from contxt.errors import CacheMissError, ConfigError, DimensionError, EmptyContextSetError

alphas = st.floats(-2.0, 2.0, allow_nan=False, allow_infinity=False)
vals = st.floats(-100, 100, allow_nan=False, allow_infinity=False)


def make_cache(*vectors, layer=1):
    cache = ContextCache()
    for i, v in enumerate(vectors):
        cache.put(ContextVector(f"c{i}", layer, np.asarray(v, dtype=float), sample_count=1))
    return cache


@st.composite
def steering_case(draw):
    dim = draw(st.integers(1, 8))
    k = draw(st.integers(1, 4))
    h = np.array(draw(st.lists(vals, min_size=dim, max_size=dim)))
    cs = [np.array(draw(st.lists(vals, min_size=dim, max_size=dim))) for _ in range(k)]
    a = draw(st.lists(alphas, min_size=k, max_size=k))
    return h, cs, a


@given(steering_case())
def test_steering_matches_summed_indexes(case):
    h, cs, a = case
    cache = make_cache(*cs)
    spec = SteeringSpec(1, tuple((f"c{i}", ai) for i, ai in enumerate(a)))
    direct = h + sum(ai * (c - h) for ai, c in zip(a, cs))
    scale = max(1.0, np.abs(h).max(), max(np.abs(c).max() for c in cs))
    np.testing.assert_allclose(apply_steering(h, spec, cache), direct, atol=1e-12 * scale * 10, rtol=0)


@given(steering_case())
def test_zero_strength_is_bitwise_identity(case):
    h, cs, _ = case
    cache = make_cache(*cs)
    spec = SteeringSpec(1, tuple((f"c{i}", 0.0) for i in range(len(cs))))
    out = apply_steering(h, spec, cache)
    assert out.tobytes() == h.tobytes()
    assert out is not h


@given(steering_case())
@example((np.array([0.0]), [np.array([-0.0])], [0.0]))  # signed zero must survive
def test_unit_strength_reconstructs_context(case):
    h, cs, _ = case
    out = apply_steering(h, SteeringSpec(1, (("c0", 1.0),)), make_cache(*cs))
    assert out.tobytes() == cs[0].tobytes()


@given(steering_case(), alphas)
def test_strength_one_term_lies_on_segment(case, a):
    h, cs, _ = case
    out = apply_steering(h, SteeringSpec(1, (("c0", a),)), make_cache(*cs))
    np.testing.assert_allclose(out, (1 - a) * h + a * cs[0], atol=1e-9)


def test_index_and_spec_hand_case():
    cache = make_cache([1.0, 1.0], [3.0, -1.0])
    h = np.array([0.0, 2.0])
    idx = SteeringIndex.form(cache.get(1, "c0"), h)
    np.testing.assert_array_equal(idx.d, [1.0, -1.0])
    spec = SteeringSpec(1, (("c0", 0.5), ("c1", -0.25)))
    # h + 0.5*(1,-1) - 0.25*(3,-3) = (-0.25, 2.25)
    np.testing.assert_allclose(apply_steering(h, spec, cache), [-0.25, 2.25])


def test_stacked_activations_steer_rowwise():
    cache = make_cache([1.0, 2.0, 3.0])
    H = np.arange(6.0).reshape(2, 3)
    out = apply_steering(H, SteeringSpec(1, (("c0", 0.5),)), cache)
    for row, h in zip(out, H):
        np.testing.assert_allclose(row, apply_steering(h, SteeringSpec(1, (("c0", 0.5),)), cache))


def test_width_mismatch():
    cache = make_cache([1.0, 2.0])
    with pytest.raises(DimensionError):
        apply_steering(np.ones(3), SteeringSpec(1, (("c0", 0.3),)), cache)
    with pytest.raises(DimensionError):
        SteeringIndex.form(cache.get(1, "c0"), np.ones(3))


def test_missing_context_is_a_cache_miss():
    cache = make_cache([1.0])
    with pytest.raises(CacheMissError):
        apply_steering(np.ones(1), SteeringSpec(2, (("c0", 0.3),)), cache)
    with pytest.raises(CacheMissError):
        cache_get(cache, 1, "nope")


def test_non_finite_strength_rejected():
    with pytest.raises(ConfigError):
        SteeringSpec(1, (("c0", float("nan")),))


def test_classifier_spec_signs():
    spec = make_classifier_spec("src", "tgt", 0.4, 0.7, 1)
    assert spec.terms == (("src", 0.4), ("tgt", -0.7))
    with pytest.raises(ConfigError):
        make_classifier_spec("src", "tgt", -0.1, 0.0, 1)
    assert make_classifier_spec("src", "tgt", 0.0, 0.0, 1).is_identity


def test_context_vector_is_read_only_copy():
    v = np.array([1.0, 2.0])
    ctx = ContextVector("a", 0, v, sample_count=2)
    v[0] = 99.0
    assert ctx.vector[0] == 1.0
    with pytest.raises(ValueError):
        ctx.vector[0] = 5.0


def test_context_vector_validation():
    with pytest.raises(EmptyContextSetError):
        ContextVector("a", 0, np.ones(2))
    with pytest.raises(DimensionError):
        ContextVector("a", 0, np.ones((2, 2)), sample_count=1)
    assert ContextVector("p", 0, np.ones(2), LAST_TOKEN).sample_count is None


def test_mean_context_matches_manual_average(shift_data, small_mlp):
    X = shift_data.val.for_domain(2).X
    ctx = extract_mean_context(small_mlp, X, 1, "d2")
    np.testing.assert_allclose(ctx.vector, small_mlp.capture(X, 1).mean(axis=0), rtol=0, atol=1e-12)
    assert ctx.sample_count == len(X)
    split_ctx = extract_mean_context(small_mlp, shift_data.val.for_domain(2), 1, "d2")
    assert split_ctx == ctx


def test_mean_context_ignores_labels(shift_data, small_mlp):
    part = shift_data.val.for_domain(1)
    shuffled = type(part)(part.X, part.y[::-1].copy(), part.domain)
    assert extract_mean_context(small_mlp, part, 1, "x") == extract_mean_context(small_mlp, shuffled, 1, "x")


def test_mean_context_empty(small_mlp):
    with pytest.raises(EmptyContextSetError):
        extract_mean_context(small_mlp, np.zeros((0, 32)), 1, "x")


def test_mean_context_on_raw_input_tap(shift_data, small_mlp):
    X = shift_data.val.X
    ctx = extract_mean_context(small_mlp, X, 0, "raw")
    np.testing.assert_allclose(ctx.vector, X.mean(axis=0), atol=1e-12)


def test_cache_round_trip(tmp_path):
    cache = make_cache([1.0, -2.5, 1e-300], [np.pi, 0.0, -0.0])
    cache.put(ContextVector("p", 2, np.array([0.1, 0.2, 0.3]), LAST_TOKEN, phrase=("be", "nice")))
    cache.model_digest = "abc"
    path = cache_save(cache, tmp_path / "c.cache")
    back = cache_load(path)
    assert back.model_digest == "abc"
    assert len(back) == 3
    for ctx in cache:
        assert back.get(*ctx.key) == ctx
    assert back.to_bytes() == cache.to_bytes()


def test_cache_put_overwrites():
    cache = ContextCache()
    cache_put(cache, ContextVector("a", 0, np.ones(2), sample_count=1))
    cache_put(cache, ContextVector("a", 0, np.zeros(2), sample_count=1))
    assert len(cache) == 1
    np.testing.assert_array_equal(cache.get(0, "a").vector, np.zeros(2))


def test_cache_load_rejects_corruption(tmp_path):
    path = make_cache([1.0, 2.0]).save(tmp_path / "c.cache")
    raw = bytearray(path.read_bytes())
    raw[-40] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CacheMissError, match="checksum"):
        cache_load(path)
    (tmp_path / "junk").write_bytes(b"hello")
    with pytest.raises(CacheMissError):
        cache_load(tmp_path / "junk")
    with pytest.raises(CacheMissError):
        cache_load(tmp_path / "missing")


class _ToyTransformer:
    """Stand-in returning a deterministic residual per position."""

    def forward_with_tap(self, tokens, tap):
        tokens = np.asarray(tokens, dtype=float)
        captured = np.stack([tokens * (tap + 1), -tokens], axis=-1)
        return None, captured


def test_phrase_context_takes_last_token():
    ctx = extract_phrase_context(_ToyTransformer(), [3, 5, 7], 1, "p", ("a", "b", "c"))
    np.testing.assert_array_equal(ctx.vector, [14.0, -7.0])
    assert ctx.provenance == LAST_TOKEN and ctx.phrase == ("a", "b", "c")
    with pytest.raises(EmptyContextSetError):
        extract_phrase_context(_ToyTransformer(), [], 1, "p")


def test_mean_of_phrases_is_flagged_experimental():
    ctx = extract_mean_phrase_context(_ToyTransformer(), [[1, 2], [1, 4]], 0, "m")
    np.testing.assert_array_equal(ctx.vector, [3.0, -3.0])
    assert ctx.provenance == MEAN_OF_PHRASES and ctx.experimental
    assert not extract_phrase_context(_ToyTransformer(), [1], 0, "p").experimental
