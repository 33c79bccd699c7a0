import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfldp.errors import RequiresSmoothFamily
from mfldp.free_energy import (critical_map, critical_map_label, fixed_point, free_energy,
                               free_energy_value, interaction_energy, interaction_energy_parts,
                               log_critical_normalizer, magnetization, minimize,
                               minimize_grid_scan, minimize_parametric_1d, rate_identification,
                               rate_identification_direct, spin_measure, stationary_residual)
from mfldp.gibbs import curie_weiss, finite_model, quadratic_product_model
from mfldp.potentials import HardCorePotential, LogPotential, ProductPotential, TablePotential
from mfldp.spaces import DiscreteMeasure, EuclideanSpace, FiniteSpace


def _f(m, beta):
    return ((1 + m) / 2 * math.log1p(m) + (1 - m) / 2 * math.log1p(-m) - beta / 2 * m * m)


@settings(max_examples=50)
@given(st.floats(-0.999, 0.999), st.floats(0.0, 3.0))
def test_spin_free_energy_identity(m, beta):
    model = curie_weiss(beta)
    assert abs(free_energy_value(model, spin_measure(model, m)) - _f(m, beta)) < 1e-12


@settings(max_examples=30)
@given(st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
def test_rate_nonnegative(w):
    model = finite_model(FiniteSpace([0, 1, 2]), [0.2, 0.3, 0.5],
                         [TablePotential([[0, 1, -1], [1, 0.5, 0], [-1, 0, 2]])])
    nu = DiscreteMeasure(model.space, [0, 1, 2], np.asarray(w) / np.sum(w))
    inf = minimize(model).inf_value
    assert free_energy_value(model, nu) - inf >= -1e-9


def test_interaction_energy_exact_table():
    sp = FiniteSpace([0, 1])
    T = np.array([[1.0, -2.0], [-2.0, 3.0]])
    nu = DiscreteMeasure(sp, [0, 1], [0.25, 0.75])
    assert abs(interaction_energy(TablePotential(T), nu) - nu.weights @ T @ nu.weights) < 1e-15


def test_interaction_energy_singular_branch():
    # atoms make the singular diagonal charged: +inf
    sp = EuclideanSpace(1, (-1, 1), 5)
    nu = DiscreteMeasure(sp, [[0.0], [0.4]], [0.5, 0.5])
    parts = interaction_energy_parts(LogPotential(), nu)
    assert parts.value == np.inf
    assert interaction_energy(HardCorePotential(0.1), nu) == np.inf


def test_order_three_energy():
    sp = FiniteSpace([-1, 1])
    nu = DiscreteMeasure(sp, [0, 1], [0.3, 0.7])
    # product kernel: E[x]^3
    assert abs(interaction_energy(ProductPotential(1.0, 3), nu) - 0.4 ** 3) < 1e-14


def test_minimizers_agree():
    for beta in (0.5, 1.2, 1.5):
        model = curie_weiss(beta)
        a = minimize_grid_scan(model).inf_value
        b = minimize_parametric_1d(model).inf_value
        c = fixed_point(model, spin_measure(model, 0.5)).inf_value
        assert abs(a - b) < 1e-9 and abs(a - c) < 1e-9


def test_fixed_point_is_critical():
    model = curie_weiss(1.5)
    res = fixed_point(model, spin_measure(model, 0.2), tol=1e-12)
    assert res.converged and res.residual < 1e-10
    t = critical_map(model, res.nu)
    assert np.allclose(t.weights, res.nu.weights, atol=1e-10)
    assert abs(magnetization(res.nu) - math.tanh(1.5 * magnetization(res.nu))) < 1e-10
    assert critical_map_label(model) == "CE"


def test_extended_label_for_higher_order():
    sp = FiniteSpace([-1, 1])
    model = finite_model(sp, [0.5, 0.5], [ProductPotential(-0.5, 3)])
    res = fixed_point(model, model.alpha)
    assert res.label == "extended-CE"


def test_quadratic_product_minimizer_is_reference():
    q = quadratic_product_model(0.25, cells=401)
    res = minimize(q)
    assert abs(res.nu.mean()[0]) < 1e-6
    assert abs(res.inf_value) < 1e-8


def test_breakdown_json():
    model = curie_weiss(1.5)
    fe = free_energy(model, spin_measure(model, 0.5)).with_rate(-0.1)
    js = fe.to_json()
    assert "total" in js and js["normalized_rate"] == pytest.approx(fe.total + 0.1)


def test_rate_identification_formula_vs_direct():
    model = curie_weiss(1.5)
    nu = spin_measure(model, 0.5)
    for n in (20, 100):
        assert abs(rate_identification(model, nu, n) - rate_identification_direct(model, nu, n)) < 1e-10
    table = finite_model(FiniteSpace([0, 1, 2]), [0.2, 0.3, 0.5],
                         [TablePotential([[0, 1, -1], [1, 0.5, 0], [-1, 0, 2]])])
    nu = DiscreteMeasure(table.space, [0, 1, 2], [0.5, 0.25, 0.25])
    assert abs(rate_identification(table, nu, 8) - rate_identification_direct(table, nu, 8)) < 1e-10


def test_stationary_residual_negative_control():
    q = quadratic_product_model(0.0, cells=501)
    wrong = DiscreteMeasure(q.space, q.alpha.support,
                            np.exp(-0.5 * (q.alpha.support[:, 0] / 1.3) ** 2), normalize=True)
    assert stationary_residual(q, wrong) > 100 * stationary_residual(q, q.alpha)
    with pytest.raises(RequiresSmoothFamily):
        stationary_residual(curie_weiss(1.0), spin_measure(curie_weiss(1.0), 0.0))


def test_critical_normalizer_spin():
    model = curie_weiss(1.5)
    # C_crit = E_alpha exp(beta m x) = cosh(beta m) for the spin model
    assert abs(log_critical_normalizer(model, spin_measure(model, 0.5)) - math.log(math.cosh(0.75))) < 1e-14
    assert model.reference.C_ref == model.reference.C
