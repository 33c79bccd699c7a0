import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfldp.errors import EmptyConfiguration, NormalizationDiverged, SpaceMismatch
from mfldp.spaces import (DiscreteMeasure, EmpiricalMeasure, EuclideanSpace, FiniteSpace,
                          build_reference, finite_reference, grid_reference, measure_from_json,
                          product_weights, relative_entropy, space_from_json)

weights = st.lists(st.floats(0.01, 10), min_size=2, max_size=6)


def _measure(space, w):
    w = np.asarray(w) / np.sum(w)
    return DiscreteMeasure(space, np.arange(len(w)), w)


def test_metric_checks():
    with pytest.raises(ValueError):
        FiniteSpace(["a", "b"], rho=[[0, 1], [2, 0]])
    with pytest.raises(ValueError):
        FiniteSpace(["a", "b", "c"], rho=[[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    with pytest.raises(ValueError):
        FiniteSpace(["a", "a"])
    sp = FiniteSpace([0, 2, 5])
    assert sp.distance(0, 2) == 5


def test_measure_validation_and_merge():
    sp = FiniteSpace([0, 1, 2])
    with pytest.raises(ValueError):
        DiscreteMeasure(sp, [0, 1], [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteMeasure(sp, [0, 1], [-0.5, 1.5])
    mu = DiscreteMeasure(sp, [1, 0, 1], [0.25, 0.5, 0.25])
    assert mu == DiscreteMeasure(sp, [0, 1], [0.5, 0.5])


@given(weights, weights)
def test_relative_entropy_nonnegative(a, b):
    n = min(len(a), len(b))
    sp = FiniteSpace(list(range(n)))
    mu, nu = _measure(sp, a[:n]), _measure(sp, b[:n])
    assert relative_entropy(mu, nu) >= -1e-12
    assert abs(relative_entropy(mu, mu)) < 1e-12


def test_relative_entropy_infinite_off_support():
    sp = FiniteSpace([0, 1])
    assert relative_entropy(DiscreteMeasure(sp, [0, 1], [0.5, 0.5]),
                            DiscreteMeasure(sp, [0], [1.0])) == np.inf


def test_space_mismatch():
    a, b = FiniteSpace([0, 1]), FiniteSpace([0, 1, 2])
    with pytest.raises(SpaceMismatch):
        relative_entropy(DiscreteMeasure(a, [0], [1.0]), DiscreteMeasure(b, [0], [1.0]))


@given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_empirical_measure_permutation_invariant(x):
    sp = FiniteSpace([0, 1, 2, 3])
    x = np.asarray(x)
    perm = np.random.default_rng(len(x)).permutation(len(x))
    assert EmpiricalMeasure(sp, x) == EmpiricalMeasure(sp, x[perm])


def test_empty_configuration():
    with pytest.raises(EmptyConfiguration):
        EmpiricalMeasure(FiniteSpace([0, 1]), np.array([], dtype=int))


def test_product_weights():
    sp = FiniteSpace([0, 1, 2])
    nu = _measure(sp, [1, 2, 3])
    w = product_weights(nu, 3)
    assert w.shape == (27,)
    assert abs(w.sum() - 1) < 1e-14
    assert abs(w[5] - nu.weights[0] * nu.weights[1] * nu.weights[2]) < 1e-15


def test_reference_normalisation():
    ref = build_reference([1, 1, 2], [0.0, np.log(2), np.inf])
    assert np.allclose(ref.alpha.dense(), [2 / 3, 1 / 3, 0])
    assert abs(ref.C - 1.5) < 1e-14
    with pytest.raises(NormalizationDiverged):
        build_reference([1, 1], [-800.0, -800.0])


def test_grid_reference_is_normal():
    sp = EuclideanSpace(1, (-8, 8), 1001)
    ref = grid_reference(sp, lambda x: 0.5 * np.sum(x ** 2, axis=-1))
    assert abs(ref.log_C - 0.5 * np.log(2 * np.pi)) < 1e-10
    assert abs(ref.alpha.mean()[0]) < 1e-12


def test_json_round_trip():
    sp = FiniteSpace(["up", "down"], rho=[[0, 1], [1, 0]])
    assert space_from_json(sp.to_json()) == sp
    mu = finite_reference(sp, [0.25, 0.75]).alpha
    assert measure_from_json(sp, mu.to_json()) == mu
    e = EuclideanSpace(2, (-1, 1), 5)
    assert space_from_json(e.to_json()) == e


@settings(max_examples=30)
@given(st.integers(1, 50), st.integers(0, 10 ** 6))
def test_sample_stays_in_support(size, seed):
    sp = FiniteSpace([0, 1, 2])
    mu = DiscreteMeasure(sp, [0, 2], [0.3, 0.7])
    x = mu.sample(np.random.default_rng(seed), size)
    assert set(np.unique(x)) <= {0, 2}
