import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normlab.invariance import (EXPECTED, SCHEMES, TOL_INV, TRANSFORMS, DegenerateDataError, Layer, TransformSpec,
                                apply_transform, default_dataset, full_table, layer_output, measure_invariance)


@pytest.fixture
def layer_and_data():
    rng = np.random.default_rng(0)
    return Layer.random(6, 5, rng), default_dataset(seed=0)


def test_transform_examples():
    layer = Layer(np.array([[1.0, 2.0], [3.0, 4.0]]), np.ones(2), np.zeros(2))
    X = np.array([[1.0, 2.0], [5.0, 6.0]])
    out, _ = apply_transform(layer, X, TransformSpec("weight-matrix-rescale", 2.0))
    np.testing.assert_array_equal(out.W, [[2, 4], [6, 8]])

    zero = Layer(np.zeros((2, 2)), np.ones(2), np.zeros(2))
    out, _ = apply_transform(zero, X, TransformSpec("weight-matrix-recenter", shift=np.array([1.0, 1.0])))
    np.testing.assert_array_equal(out.W, [[1, 1], [1, 1]])

    _, X2 = apply_transform(layer, X, TransformSpec("single-case-rescale", 3.0, index=0))
    np.testing.assert_array_equal(X2, [[3, 6], [5, 6]])
    np.testing.assert_array_equal(X, [[1, 2], [5, 6]])


def test_recenter_adds_gamma_to_every_row():
    W = np.arange(6.0).reshape(3, 2)
    gamma = np.array([0.5, -1.0])
    out, _ = apply_transform(Layer(W, np.ones(3), np.zeros(3)), np.ones((2, 2)),
                             TransformSpec("weight-matrix-recenter", shift=gamma))
    np.testing.assert_array_equal(out.W, W + np.outer(np.ones(3), gamma))


def test_transform_index_out_of_range():
    layer = Layer(np.ones((2, 2)), np.ones(2), np.zeros(2))
    with pytest.raises(IndexError):
        apply_transform(layer, np.ones((3, 2)), TransformSpec("single-case-rescale", 2.0, index=3))
    with pytest.raises(IndexError):
        apply_transform(layer, np.ones((3, 2)), TransformSpec("weight-vector-rescale", 2.0, index=-1))


@pytest.mark.parametrize("scheme, kind, invariant", [
    ("layer", "weight-matrix-recenter", True),
    ("batch", "single-case-rescale", False),
    ("weight", "dataset-rescale", False),
])
def test_single_cell_examples(layer_and_data, scheme, kind, invariant):
    layer, X = layer_and_data
    v = measure_invariance(scheme, layer, X, kind)
    assert v.invariant is invariant and v.passed


@pytest.mark.parametrize("scheme", SCHEMES)
def test_identity_transform_is_invariant(layer_and_data, scheme):
    layer, X = layer_and_data
    ident = [TransformSpec("weight-matrix-rescale", 1.0), TransformSpec("dataset-recenter", shift=np.zeros(5)),
             TransformSpec("single-case-rescale", 1.0, index=3)]
    for t in ident:
        v = measure_invariance(scheme, layer, X, t.kind, transforms=[t])
        assert v.deviation == 0.0


def test_full_table_matches_expectation(layer_and_data):
    _, X = layer_and_data
    table = full_table(X)
    assert table.passed, table.failures
    assert table.matrix == {s: EXPECTED[s] for s in SCHEMES}


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_verdicts_independent_of_seed_and_order(seed):
    X = default_dataset(seed=seed)
    perm = np.random.default_rng(seed).permutation(X.shape[0])
    a = full_table(X, seed=seed)
    b = full_table(X[perm], seed=seed + 1)
    assert a.matrix == b.matrix == {s: EXPECTED[s] for s in SCHEMES}


def test_ln_weight_matrix_identity_many_draws(layer_and_data):
    layer, X = layer_and_data
    base = layer_output("layer", layer, X)
    rng = np.random.default_rng(1)
    for _ in range(100):
        delta = float(np.exp(rng.uniform(np.log(0.25), np.log(4.0))))
        gamma = rng.normal(size=5)
        W2 = delta * layer.W + np.outer(np.ones(6), gamma)
        out = layer_output("layer", Layer(W2, layer.gain, layer.bias), X)
        assert np.max(np.abs(out - base)) <= TOL_INV


def test_bn_dataset_recenter(layer_and_data):
    layer, X = layer_and_data
    c = np.random.default_rng(2).normal(size=5) * 10
    assert np.max(np.abs(layer_output("batch", layer, X + c) - layer_output("batch", layer, X))) <= TOL_INV


def test_degenerate_dataset_rejected(layer_and_data):
    layer, _ = layer_and_data
    with pytest.raises(DegenerateDataError):
        measure_invariance("batch", layer, np.ones((10, 5)), "dataset-rescale")


def test_csv_shape(layer_and_data):
    _, X = layer_and_data
    lines = full_table(X).to_csv().splitlines()
    assert lines[0] == "scheme,transform,deviation,invariant,expected,pass"
    assert len(lines) == 1 + len(SCHEMES) * len(TRANSFORMS)
    assert all(line.endswith("True") for line in lines[1:])
