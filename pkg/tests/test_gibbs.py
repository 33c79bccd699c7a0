import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from mfldp.errors import Diverged, NonDifferentiableFamily, SingularFamilyRejected
from mfldp.gibbs import (LangevinConfig, curie_weiss, euclidean_model, finite_model,
                         gibbs_log_probabilities, hamiltonian, log_partition_estimate, log_partition_exact,
                         quadratic_product_model, sample_mcmc, simulate_sde)
from mfldp.potentials import (HardCorePotential, LogPotential, QuadraticConfinement,
                              SpinProductPotential, TablePotential)
from mfldp.spaces import FiniteSpace


def _spin_oracle(beta, n, p=0.5):
    # independent class sum: sum_k C(n,k) p^k (1-p)^(n-k) exp(beta (M^2 - n) / (2 (n-1)))
    k = np.arange(n + 1)
    M = 2 * k - n
    logb = np.array([math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) for i in k])
    terms = logb + k * math.log(p) + (n - k) * math.log(1 - p) + beta * (M ** 2 - n) / (2 * (n - 1))
    return logsumexp(terms) / n


@pytest.mark.parametrize("beta,n", [(0.5, 10), (1.5, 50), (1.0, 400)])
def test_spin_partition_oracle(beta, n):
    assert abs(log_partition_exact(curie_weiss(beta), n) - _spin_oracle(beta, n)) < 1e-12


@pytest.mark.parametrize("n", [2, 5, 9])
def test_spin_route_matches_enumeration(n):
    m = curie_weiss(1.2, p_plus=0.3)
    assert abs(log_partition_exact(m, n, "spin") - log_partition_exact(m, n, "enum")) < 1e-12


def test_no_interaction_partition_is_zero():
    m = finite_model(FiniteSpace([0, 1]), [0.5, 0.5])
    assert log_partition_exact(m, 10) == 0.0


@settings(max_examples=25)
@given(st.lists(st.sampled_from([0, 1]), min_size=3, max_size=8))
def test_hamiltonian_spin_closed_form(x):
    beta = 0.8
    m = curie_weiss(beta)
    x = np.asarray(x)
    n = len(x)
    M = np.sum(np.where(x == 1, 1, -1))
    V = n * math.log(2)
    expected = V - beta * (M ** 2 - n) / (2 * (n - 1))
    assert abs(hamiltonian(m, x) - expected) < 1e-10


def test_hamiltonian_infinite():
    m = euclidean_model(QuadraticConfinement(), [HardCorePotential(0.5)])
    assert hamiltonian(m, np.array([0.0, 0.2, 2.0])) == np.inf


def test_mcmc_detailed_balance_small():
    sp = FiniteSpace([0, 1, 2])
    m = finite_model(sp, [0.2, 0.3, 0.5], [TablePotential([[0, 1, -1], [1, 0, 0.5], [-1, 0.5, 0]])])
    res = sample_mcmc(m, 3, 300_000, 1000, 1, seed=4)
    codes = res.samples @ np.array([9, 3, 1])
    emp = np.bincount(codes, minlength=27) / len(codes)
    assert 0.5 * np.abs(emp - np.exp(gibbs_log_probabilities(m, 3))).sum() < 0.02


def test_mcmc_reproducible_and_reports():
    m = curie_weiss(1.0)
    a = sample_mcmc(m, 30, 3000, 300, 30, seed=7)
    b = sample_mcmc(m, 30, 3000, 300, 30, seed=7)
    assert np.array_equal(a.samples, b.samples)
    rep = a.report()
    assert rep["seed"] == 7 and 0 < rep["acceptance_rate"] <= 1
    assert np.allclose(a.u_values().ravel(), [
        -0.5 * np.sum(np.outer(s, s) - np.diag(s * s)) / (30 * 29)
        for s in np.where(a.samples == 1, 1.0, -1.0)])


def test_mcmc_euclidean_tunes_sigma():
    q = quadratic_product_model(0.25)
    res = sample_mcmc(q, 50, 5000, 5000, 50, seed=0)
    assert res.sigma is not None and res.sigma > 0
    assert 0.15 < res.acceptance_rate < 0.75


def test_mcmc_hard_core_never_infinite():
    m = euclidean_model(QuadraticConfinement(), [HardCorePotential(0.05)])
    res = sample_mcmc(m, 20, 2000, 200, 100, seed=1)
    for x in res.samples:
        assert np.isfinite(hamiltonian(m, x))


def test_langevin_ou_variance():
    m = euclidean_model(QuadraticConfinement(1.0))
    traj = simulate_sde(m, 400, LangevinConfig(dt=1e-2, horizon=20.0), seed=3, record_every=50)
    late = traj.configurations[traj.times >= 5.0]
    # Euler-Maruyama stationary variance for this step is 1 / (1 - dt/2)
    assert abs(late.var() - 1 / (1 - 5e-3)) < 0.05


def test_langevin_guards():
    m = euclidean_model(QuadraticConfinement(), [LogPotential()])
    with pytest.raises(SingularFamilyRejected):
        simulate_sde(m, 10)
    with pytest.raises(NonDifferentiableFamily):
        simulate_sde(curie_weiss(1.0), 10)
    steep = euclidean_model(QuadraticConfinement(1000.0))
    with pytest.raises(Diverged):
        simulate_sde(steep, 5, LangevinConfig(dt=0.1, horizon=10.0))


def test_scaled_model_spin_beta():
    m = curie_weiss(1.5).scaled(0.5)
    assert m.is_spin() and abs(m.spin_beta() - 0.75) < 1e-15
    assert isinstance(m.interactions[0].base, SpinProductPotential)


def test_ti_small_model():
    m = curie_weiss(1.0)
    n = 30
    est = log_partition_estimate(m, n, np.linspace(0, 1, 21), replicas=6, seed=2, sweeps=60,
                                 burn_in_sweeps=10)
    exact = log_partition_exact(m, n)
    assert abs(est.value - exact) < 4 * est.stderr + 2e-3
    assert est.report()["resolution"] == pytest.approx(0.05)
    with pytest.raises(ValueError):
        log_partition_estimate(m, n, np.linspace(0, 1, 5))
