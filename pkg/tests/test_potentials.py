import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfldp.errors import BudgetExhausted, ConfigError
from mfldp.gibbs import quadratic_product_model
from mfldp.potentials import (GaussianPotential, HardCorePotential, LogPotential,
                              PowerLawPotential, ProductPotential, QuadraticProductPotential,
                              ScaledPotential, TablePotential, check_exp_integrability,
                              check_symmetry, log_mean_exp_jackknife, negative_part,
                              positive_part, potential_from_config, select_truncation_level,
                              truncate)
from mfldp.spaces import EuclideanSpace, FiniteSpace

LINE = EuclideanSpace(1, (-4, 4), 101)


@pytest.mark.parametrize("W", [PowerLawPotential(1.0, 1.0), LogPotential(), GaussianPotential(),
                               QuadraticProductPotential(0.3), HardCorePotential(0.1),
                               ProductPotential(0.5, 3)])
def test_symmetry(W):
    assert check_symmetry(W, LINE, np.random.default_rng(0))


def test_table_symmetry_enforced():
    with pytest.raises(ValueError):
        TablePotential([[0, 1], [2, 0]])
    W = TablePotential.symmetrized([[0, 1], [3, 0]])
    assert W.table[0, 1] == W.table[1, 0] == 2
    with pytest.raises(ValueError):
        TablePotential([[0, -np.inf], [-np.inf, 0]])


def test_singular_values():
    W = LogPotential()
    assert W.values(LINE, np.array([0.5]), np.array([0.5]))[()] == np.inf
    assert PowerLawPotential().values(LINE, np.array([1.0]), np.array([1.0]))[()] == np.inf


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_parts_recombine(x, y):
    W = LogPotential()
    a, b = np.array([x]), np.array([y])
    w = W.values(LINE, a, b)
    if np.isfinite(w):
        diff = positive_part(W).values(LINE, a, b) - negative_part(W).values(LINE, a, b)
        assert abs(diff - w) < 1e-12


@given(st.floats(0.1, 20), st.floats(-3, 3), st.floats(-3, 3))
def test_truncation_bounds(L, x, y):
    W = LogPotential()
    v = truncate(W, L).values(LINE, np.array([x]), np.array([y]))
    assert -L <= v <= L


def test_truncation_monotone_in_level():
    # upper clamp increases with L; on a grid the diagonal makes the limit +inf
    sp = FiniteSpace([0, 1, 2])
    W = TablePotential([[np.inf, 1.0, -2.0], [1.0, np.inf, 0.5], [-2.0, 0.5, np.inf]])
    prev = None
    for L in range(1, 65):
        t = truncate(W, L, lower=False).tabulate(sp)
        if prev is not None:
            assert np.all(t >= prev)
        prev = t


def test_scaled_zero_times_inf():
    W = ScaledPotential(HardCorePotential(1.0), 0.0)
    assert W.values(LINE, np.array([0.0]), np.array([0.1]))[()] == 0.0


def test_config_round_trip():
    for W in (PowerLawPotential(2.0, 1.5), LogPotential(0.5), GaussianPotential(1.0, 2.0),
              QuadraticProductPotential(0.25), TablePotential([[1.0, 0.0], [0.0, 1.0]])):
        again = potential_from_config(W.to_config())
        assert again.to_config() == W.to_config()


def test_config_errors():
    with pytest.raises(ConfigError):
        potential_from_config({"family": "nope"})
    with pytest.raises(ConfigError):
        potential_from_config({"family": "log", "order": 3})


def test_log_mean_exp_jackknife():
    a = np.log(np.arange(1, 11, dtype=float))
    value, se = log_mean_exp_jackknife(a)
    assert abs(value - np.log(5.5)) < 1e-14
    assert se > 0


def test_exp_integrability_gaussian():
    # E exp(lam X) for X ~ N(0,1) is exp(lam^2/2)
    q = quadratic_product_model(0.0)
    r = check_exp_integrability((1, lambda x: x[..., 0]), q.alpha, 0.5, 200_000, seed=1)
    assert abs(r.log_estimate - 0.125) < 4 * r.log_stderr + 1e-3
    assert not r.unstable


def test_truncation_level_budget():
    q = quadratic_product_model(0.25)
    with pytest.raises(ValueError):
        select_truncation_level(LogPotential(), 1, q.alpha, sample_budget=100)
    with pytest.raises(BudgetExhausted):
        select_truncation_level(LogPotential(), 1, q.alpha, 10_000, max_exponent=0)
