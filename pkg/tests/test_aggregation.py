import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vi2dssm.aggregation import AggregatorSpec, attention_weights, compute_psi, pool, pooling_cost
from vi2dssm.errors import DimensionError, DomainError, SizeError
from vi2dssm.numerics import Rng


def test_mean_and_sum_examples():
    items = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 9.0]])
    np.testing.assert_array_equal(pool(AggregatorSpec("sum"), items), [9.0, 15.0])
    np.testing.assert_array_equal(pool(AggregatorSpec("mean"), items), [3.0, 5.0])


def test_attention_matches_naive_softmax():
    rng = Rng(3)
    spec = AggregatorSpec.attention(4, rng, temperature=0.7)
    items = np.random.default_rng(0).normal(size=(6, 4))
    scores = np.array([spec.query @ (spec.key_proj @ v) for v in items]) / 0.7
    w = np.exp(scores) / np.exp(scores).sum()
    np.testing.assert_allclose(attention_weights(spec, items), w, atol=1e-14)
    np.testing.assert_allclose(pool(spec, items), w @ items, atol=1e-13)


def test_attention_handles_large_scores():
    spec = AggregatorSpec("attention", query=[1.0], key_proj=[[1.0]])
    out = pool(spec, np.array([[1000.0], [999.0]]))
    w = 1.0 / (1.0 + np.exp(-1.0))
    assert out[0] == pytest.approx(1000 * w + 999 * (1 - w))


def test_single_item_pools_to_itself():
    v = np.array([[0.3, -1.2]])
    for spec in (AggregatorSpec("mean"), AggregatorSpec("sum"), AggregatorSpec.attention(2, Rng(0))):
        np.testing.assert_array_equal(pool(spec, v), v[0])


def test_spec_validation():
    with pytest.raises(DomainError):
        AggregatorSpec("max")
    with pytest.raises(DomainError):
        AggregatorSpec("attention")
    with pytest.raises(DomainError):
        AggregatorSpec("attention", query=[1.0], key_proj=[[1.0]], temperature=0.0)
    with pytest.raises(DimensionError):
        AggregatorSpec("attention", query=[1.0, 2.0], key_proj=[[1.0]])


def test_pool_input_errors():
    with pytest.raises(DomainError):
        pool(AggregatorSpec(), np.zeros((0, 3)))
    with pytest.raises(DimensionError):
        pool(AggregatorSpec(), np.zeros(3))
    with pytest.raises(DimensionError):
        compute_psi(np.ones((2, 3)), np.ones((4, 2)), AggregatorSpec())
    with pytest.raises(SizeError):
        compute_psi(np.ones((2, 3)), np.ones((0, 3)), AggregatorSpec())


def test_compute_psi_projects_then_pools():
    r = np.random.default_rng(1)
    W, z = r.normal(size=(3, 5)), r.normal(size=(7, 5))
    np.testing.assert_allclose(compute_psi(W, z, AggregatorSpec("mean")), (z @ W.T).mean(0),
                               atol=1e-14)


def test_batched_pooling():
    items = np.random.default_rng(2).normal(size=(4, 6, 3))
    got = pool(AggregatorSpec("sum"), items)
    for b in range(4):
        np.testing.assert_array_equal(got[b], pool(AggregatorSpec("sum"), items[b]))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 20), st.integers(1, 6), st.integers(0, 2**32 - 1),
       st.sampled_from(["mean", "sum", "attention"]))
def test_pool_is_bit_identical_under_relabelling(C, d, seed, kind):
    r = np.random.default_rng(seed)
    items = r.normal(size=(C, d)) * 10.0 ** r.uniform(-4, 4, size=(C, 1))
    spec = AggregatorSpec.attention(d, Rng(seed)) if kind == "attention" else AggregatorSpec(kind)
    perm = r.permutation(C)
    np.testing.assert_array_equal(pool(spec, items[perm]), pool(spec, items))
    np.testing.assert_array_equal(compute_psi(np.eye(d), items[perm], spec),
                                  compute_psi(np.eye(d), items, spec))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_attention_weights_are_a_distribution(C, seed):
    spec = AggregatorSpec.attention(3, Rng(seed))
    w = attention_weights(spec, np.random.default_rng(seed).normal(size=(C, 3)) * 5)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) < 1e-12


def test_pooling_cost_spans():
    assert pooling_cost("mean", 1, 4)["span"] == 0
    assert pooling_cost("sum", 64, 4) == {"work": 256, "span": 6, "memory": 4}
    assert pooling_cost("attention", 64, 4)["span"] >= 6


def test_identity_projection_of_identical_features():
    z = np.tile([0.25, -1.5, 3.0], (5, 1))
    np.testing.assert_array_equal(compute_psi(np.eye(3), z, AggregatorSpec("mean")), z[0])
    for kind in ("mean", "sum"):
        assert np.all(compute_psi(np.zeros((2, 3)), z, AggregatorSpec(kind)) == 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_mean_sum_relation_and_scaling(C, seed, a):
    # both identities hold up to one rounding of the final division or product
    items = np.random.default_rng(seed).normal(size=(C, 3))
    mean, total = pool(AggregatorSpec("mean"), items), pool(AggregatorSpec("sum"), items)
    np.testing.assert_allclose(C * mean, total, rtol=4e-16, atol=1e-300)
    np.testing.assert_allclose(pool(AggregatorSpec("mean"), a * items), a * mean,
                               rtol=1e-14, atol=1e-14 * abs(a))
