import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfldp.errors import DimensionMismatch, SpaceMismatch, SupportTooLarge
from mfldp.gibbs import quadratic_product_model
from mfldp.spaces import DiscreteMeasure, EuclideanSpace, FiniteSpace, build_reference
from mfldp.wasserstein import (cost_matrix, tail_condition_check, wasserstein, wasserstein_1d,
                               wasserstein_exact)

PLANE = EuclideanSpace(2, (-5, 5), 11)
LINE = EuclideanSpace(1, (-5, 5), 11)


def cloud(draw, space, max_atoms=6):
    k = draw(st.integers(1, max_atoms))
    pts = draw(st.lists(st.lists(st.floats(-3, 3), min_size=space.dim, max_size=space.dim),
                        min_size=k, max_size=k))
    w = draw(st.lists(st.floats(0.05, 1), min_size=k, max_size=k))
    return DiscreteMeasure(space, np.array(pts), np.asarray(w) / np.sum(w))


@st.composite
def plane_measures(draw):
    return cloud(draw, PLANE)


@st.composite
def line_measures(draw):
    return cloud(draw, LINE)


@settings(max_examples=40)
@given(plane_measures(), plane_measures(), plane_measures())
def test_metric_axioms(a, b, c):
    ab = wasserstein_exact(a, b)[0]
    assert ab >= 0
    assert abs(ab - wasserstein_exact(b, a)[0]) < 1e-9
    assert wasserstein_exact(a, a)[0] < 1e-9
    assert wasserstein_exact(a, c)[0] <= ab + wasserstein_exact(b, c)[0] + 1e-9


@settings(max_examples=40)
@given(plane_measures(), plane_measures())
def test_monotone_in_p(a, b):
    vals = [wasserstein_exact(a, b, p)[0] for p in (1.0, 1.5, 2.0, 3.0)]
    assert all(y >= x - 1e-9 for x, y in zip(vals, vals[1:]))


@settings(max_examples=40)
@given(plane_measures(), plane_measures())
def test_plan_marginals(a, b):
    value, plan = wasserstein_exact(a, b, 2.0)
    assert np.allclose(plan.coupling.sum(axis=1), a.weights, atol=1e-9)
    assert np.allclose(plan.coupling.sum(axis=0), b.weights, atol=1e-9)
    assert abs(np.sum(plan.coupling * cost_matrix(a, b, 2.0)) - value ** 2) < 1e-9


@settings(max_examples=60)
@given(line_measures(), line_measures(), st.sampled_from([1.0, 2.0, 2.5]))
def test_quantile_matches_lp(a, b, p):
    assert abs(wasserstein_1d(a, b, p) - wasserstein_exact(a, b, p)[0]) < 1e-9


def test_dirac_distance_and_assignment_route():
    sp = EuclideanSpace(1, (-5, 5), 11)
    a = DiscreteMeasure(sp, [[0.0], [1.0], [2.0]], np.full(3, 1 / 3))
    b = DiscreteMeasure(sp, [[0.5], [1.5], [3.5]], np.full(3, 1 / 3))
    assert abs(wasserstein_exact(a, b)[0] - (0.5 + 0.5 + 1.5) / 3) < 1e-14
    assert abs(wasserstein(a, b) - wasserstein_exact(a, b)[0]) < 1e-14


def test_finite_space_routes():
    sp = FiniteSpace(["a", "b", "c"], rho=[[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    a = DiscreteMeasure(sp, [0], [1.0])
    b = DiscreteMeasure(sp, [2], [1.0])
    assert wasserstein(a, b) == 2.0
    with pytest.raises(DimensionMismatch):
        wasserstein_1d(a, b)


def test_errors():
    with pytest.raises(SpaceMismatch):
        wasserstein_exact(DiscreteMeasure(LINE, [[0.0]], [1.0]),
                          DiscreteMeasure(PLANE, [[0.0, 0.0]], [1.0]))
    big = DiscreteMeasure(LINE, np.arange(2001, dtype=float)[:, None] / 1000, np.full(2001, 1 / 2001))
    with pytest.raises(SupportTooLarge):
        wasserstein_exact(big, big)
    with pytest.raises(ValueError):
        wasserstein_1d(big, big, 0.5)


def test_tail_condition_gaussian_grid():
    q = quadratic_product_model(0.0)
    (p1,) = tail_condition_check(q.alpha, 1.0, [1.0])
    assert p1.passes
    small, big = tail_condition_check(q.alpha, 2.0, [0.4, 1.0])
    assert small.passes and not big.passes
    # E exp(0.4 X^2) = (1 - 0.8)^(-1/2), less the mass cut off by the box
    assert abs(small.estimate - 0.2 ** -0.5) < 2e-3


def test_tail_condition_finite_and_sampler():
    ref = build_reference([1, 1, 1], [0, 0, 0])
    (t,) = tail_condition_check(ref, 1.0, [2.0])
    assert t.method == "exact" and t.passes
    cauchy = tail_condition_check(lambda rng, size: rng.standard_cauchy((size, 1)), 1.0, [1.0],
                                  space=LINE, sample_budget=50_000)
    assert not cauchy[0].passes
