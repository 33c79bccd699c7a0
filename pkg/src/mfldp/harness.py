"""Experiment drivers: exact type-class rate checks, Monte Carlo rate
estimation, inequality suites and empirical-measure convergence reports."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.special import gammaln, logsumexp, rel_entr
from scipy.stats import norm

from .errors import EventEmpty, TooLargeToEnumerate
from .free_energy import (_batch_free_energy, _simplex_mesh, _tables, free_energy_value,
                          minimize, spin_measure)
from .gibbs import GibbsModel, sample_mcmc
from .parallel import parallel_map
from .potentials import TablePotential
from .spaces import DiscreteMeasure, FiniteSpace, empirical_measure, finite_reference
from .ustats import (decoupling_sides, finite_tuple_sums, index_count, iterated_log_mgf_bound,
                     iterated_log_mgf_lhs, log_mgf_exact, log_mgf_keybound)
from .wasserstein import tail_condition_check, wasserstein

TYPE_LIMIT = 10_000_000


# -- events -------------------------------------------------------------------

@dataclass(frozen=True)
class TypeEvent:
    """Event {L_n in A} with A described on the simplex of weight vectors.

    ``predicate`` maps an array of weight vectors (B, S) to a boolean (B,).
    """

    predicate: object
    description: str

    def __call__(self, weights) -> np.ndarray:
        return np.asarray(self.predicate(np.atleast_2d(weights)), dtype=bool)

    @classmethod
    def whole(cls):
        return cls(lambda w: np.ones(len(w), dtype=bool), "whole simplex")

    @classmethod
    def mass_at_most(cls, index: int, threshold: float):
        return cls(lambda w: w[:, index] <= threshold + 1e-12,
                   f"nu({index}) <= {threshold}")

    @classmethod
    def mass_at_least(cls, index: int, threshold: float):
        return cls(lambda w: w[:, index] >= threshold - 1e-12,
                   f"nu({index}) >= {threshold}")

    @classmethod
    def magnetization_at_least(cls, space: FiniteSpace, threshold: float):
        """{|mean| >= threshold} for numeric labels."""
        x = np.asarray(space.labels, dtype=float)
        return cls(lambda w: np.abs(w @ x) >= threshold - 1e-12,
                   f"|m| >= {threshold}")


def _type_counts(n: int, S: int) -> np.ndarray:
    total = math.comb(n + S - 1, S - 1)
    if total > TYPE_LIMIT:
        raise TooLargeToEnumerate(f"{total} type classes at n={n}")
    return np.rint(_simplex_mesh(S, n) * n).astype(np.int64)


def _log_multinomial(n, counts):
    return gammaln(n + 1) - gammaln(counts + 1).sum(axis=1)


def method_of_types_envelope(S: int, n: int) -> float:
    return S * math.log(n + 1) / n


# -- reports ----------------------------------------------------------------

@dataclass
class RateRow:
    n: int
    value: float
    target: float | None
    lower: float | None = None
    upper: float | None = None
    envelope: float | None = None
    hits: int | None = None
    trials: int | None = None
    censored: bool = False

    @property
    def gap(self) -> float | None:
        if self.target is None:
            return None
        return self.value - self.target


@dataclass
class RateReport:
    kind: str
    rows: list
    description: str = ""
    diagnostics: dict = field(default_factory=dict)

    def gaps(self) -> list:
        return [r.gap for r in self.rows]

    def gap_decreasing(self) -> bool:
        g = [abs(x) for x in self.gaps() if x is not None and np.isfinite(x)]
        return all(b < a for a, b in zip(g, g[1:]))

    def columns(self):
        return ["n", "value", "target", "gap", "lower", "upper", "envelope", "hits",
                "trials", "censored"]

    def table(self) -> list:
        return [[r.n, r.value, r.target, r.gap, r.lower, r.upper, r.envelope, r.hits,
                 r.trials, r.censored] for r in self.rows]

    def to_json(self) -> dict:
        return {"kind": self.kind, "description": self.description,
                "columns": self.columns(), "rows": self.table(),
                "diagnostics": self.diagnostics}


# -- exact free-case rates ------------------------------------------------------

def _entropy_infimum(alpha_w: np.ndarray, event: TypeEvent, mesh_steps: int) -> float:
    pts = _simplex_mesh(len(alpha_w), mesh_steps)
    inside = pts[event(pts)]
    if len(inside) == 0:
        raise EventEmpty(f"no simplex point of mesh 1/{mesh_steps} lies in {event.description}")
    return float(np.min(rel_entr(inside, alpha_w).sum(axis=1)))


def sanov_exact_check(alpha, n_list, event: TypeEvent, target: float | None = None,
                      mesh_steps: int | None = None) -> RateReport:
    """Exact (1/n) log P(L_n in event) under i.i.d. alpha against -inf H(.|alpha).

    The infimum is taken over a simplex mesh (plus every type class visited)
    unless ``target`` supplies it.
    """
    a = alpha.dense() if isinstance(alpha, DiscreteMeasure) else np.asarray(alpha, float)
    S = len(a)
    if S > 5:
        raise TooLargeToEnumerate("type-class enumeration limited to |S| <= 5")
    with np.errstate(divide="ignore"):
        la = np.log(a)
    if target is None:
        steps = mesh_steps or (2000 if S <= 3 else 60)
        inf_h = _entropy_infimum(a, event, steps)
    else:
        inf_h = -target
    rows = []
    for n in n_list:
        if n > 2000:
            raise TooLargeToEnumerate("n limited to 2000")
        counts = _type_counts(n, S)
        w = counts / n
        inside = event(w)
        if not np.any(inside):
            raise EventEmpty(f"no type class at n={n} lies in {event.description}")
        c = counts[inside]
        with np.errstate(invalid="ignore"):
            logp = _log_multinomial(n, c) + np.where(c > 0, c * la, 0.0).sum(axis=1)
        value = float(logsumexp(logp)) / n
        if target is None:
            inf_h = min(inf_h, float(np.min(rel_entr(w[inside], a).sum(axis=1))))
        rows.append(RateRow(n, value, None, envelope=method_of_types_envelope(S, n)))
    for r in rows:
        r.target = -inf_h
    return RateReport("sanov-exact", rows, event.description)


def best_type_class(model: GibbsModel, n: int, event: TypeEvent):
    """Type class in the event with least free energy at resolution 1/n."""
    S = model.space.size
    counts = _type_counts(n, S)
    w = counts / n
    inside = w[event(w)]
    if len(inside) == 0:
        raise EventEmpty(f"no type class at n={n} lies in {event.description}")
    vals = _batch_free_energy(model, inside)
    j = int(np.argmin(vals))
    return inside[j], float(vals[j])


def exact_event_log_probability(model: GibbsModel, n: int, event: TypeEvent) -> float:
    """(1/n) log P_n(L_n in event) for a finite model, summing over type classes."""
    S = model.space.size
    counts = _type_counts(n, S)
    la = model.reference.log_alpha
    with np.errstate(invalid="ignore"):
        logw = _log_multinomial(n, counts) + np.where(counts > 0, counts * la, 0.0).sum(axis=1)
    for W, T in zip(model.interactions, _tables(model)):
        logw = logw - n * finite_tuple_sums(T, counts) / index_count(n, W.order)
    inside = event(counts / n)
    if not np.any(inside):
        raise EventEmpty(f"no type class at n={n} lies in {event.description}")
    return float(logsumexp(logw[inside]) - logsumexp(logw)) / n


def exact_rate_report(model: GibbsModel, n_list, event: TypeEvent) -> RateReport:
    """Exact (1/n) log P_n(L_n in event) per n against -inf I_W over the event."""
    target = _event_target(model, event)
    rows = [RateRow(n, exact_event_log_probability(model, n, event), target,
                    envelope=method_of_types_envelope(model.space.size, n)) for n in n_list]
    return RateReport("rate-exact", rows, event.description)


# -- Monte Carlo rates ----------------------------------------------------------

def wilson_interval(hits: int, trials: int, z: float = 1.96):
    p = hits / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials ** 2)) / denom
    # pin the endpoints exactly; rounding would otherwise exclude p = 0 or 1
    lo = 0.0 if hits == 0 else max(centre - half, 0.0)
    hi = 1.0 if hits == trials else min(centre + half, 1.0)
    return lo, hi


def _event_target(model: GibbsModel, event: TypeEvent, mesh: float = 1e-3):
    """-inf of I_W over the event, or None when no certified oracle applies."""
    if model.space.kind != "finite":
        return None
    inf_h = minimize(model).inf_value
    if model.is_spin():
        ms = np.linspace(-1, 1, int(round(2 / mesh)) + 1)
        weights = np.stack([(1 - ms) / 2, (1 + ms) / 2], axis=1)
        order = [model.space.index(-1), model.space.index(1)]
        w = np.zeros_like(weights)
        w[:, order] = weights
        inside = event(w)
        if not np.any(inside):
            return None
        vals = [free_energy_value(model, spin_measure(model, m)) for m in ms[inside]]
        return -(min(vals) - inf_h)
    if model.space.size <= 4:
        steps = 1000 if model.space.size <= 3 else 100
        pts = _simplex_mesh(model.space.size, steps)
        inside = pts[event(pts)]
        if len(inside) == 0:
            return None
        return -(float(np.min(_batch_free_energy(model, inside))) - inf_h)
    return None


def estimate_rate(model: GibbsModel, event, n_list, replicas: int = 1000, seed=0,
                  chains: int = 10, burn_in_sweeps: int = 20, thin_sweeps: int = 1,
                  target: float | None = None) -> RateReport:
    """Naive Monte Carlo estimate of (1/n) log P_n(L_n in event) per n.

    ``replicas`` samples per n are split over independent chains, each
    burned in and thinned by whole sweeps. Zero hits give a -inf censored
    row. ``event`` is a :class:`TypeEvent` (finite spaces) or a callable on
    :class:`EmpiricalMeasure` returning bool.
    """
    if replicas < 1000:
        raise ValueError("rate estimation needs at least 1e3 replicas")
    if target is None and isinstance(event, TypeEvent):
        target = _event_target(model, event)
    per_chain = math.ceil(replicas / chains)
    rows = []
    ss = np.random.SeedSequence(seed)
    for n, nseed in zip(n_list, ss.spawn(len(n_list))):
        hits = trials = 0
        for cseed in nseed.spawn(chains):
            if model.interactions:
                res = sample_mcmc(model, n, per_chain * thin_sweeps * n,
                                  burn_in_sweeps * n, thin_sweeps * n, seed=cseed)
                samples = res.samples
            else:
                rng = np.random.default_rng(cseed)
                samples = np.stack([model.alpha.sample(rng, n) for _ in range(per_chain)])
            hits += int(np.sum(_evaluate_event(model, event, samples)))
            trials += len(samples)
        lo, hi = wilson_interval(hits, trials)
        with np.errstate(divide="ignore"):
            value = math.log(hits / trials) / n if hits else -math.inf
            lower = math.log(lo) / n if lo > 0 else -math.inf
            upper = math.log(hi) / n
        rows.append(RateRow(n, value, target, lower, upper, None, hits, trials, hits == 0))
    desc = getattr(event, "description", "custom event")
    diag = {"target": "available" if target is not None else "target unavailable"}
    return RateReport("rate-mc", rows, desc, diag)


def _evaluate_event(model, event, samples) -> np.ndarray:
    if isinstance(event, TypeEvent):
        S = model.space.size
        n = samples.shape[1]
        counts = np.stack([(samples == s).sum(axis=1) for s in range(S)], axis=1)
        return event(counts / n)
    return np.array([bool(event(empirical_measure(model.space, x))) for x in samples])


# -- inequality suites ------------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    instances: int
    violations: int
    slack_min: float
    slack_median: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def _random_instance(rng, max_states, max_n, k=2):
    S = int(rng.integers(2, max_states + 1))
    n = int(rng.integers(k, max_n + 1))
    alpha = rng.integers(1, 5, size=S).astype(float)
    alpha /= alpha.sum()
    raw = rng.integers(-4, 5, size=(S,) * k) / 4.0
    table = (raw + raw.T) / 2 if k == 2 else raw
    return S, n, alpha, table


def verify_inequalities(instance_count: int = 100, seed=0, max_states: int = 3,
                        max_n: int = 5, lams=(0.5, 1.0), tol: float = 1e-10) -> list:
    """Exact-enumeration checks of the decoupling, iterated-MGF and key-MGF bounds.

    Each suite draws ``instance_count`` random instances with |S| <= max_states,
    n <= max_n, k = 2 and rational tables. A violation stores the instance.
    """
    rng = np.random.default_rng(seed)
    suites = {"decoupling-exp": [], "decoupling-square": [], "iterated-mgf": [],
              "mgf-keybound": []}
    failures = {name: [] for name in suites}

    def record(name, lhs, rhs, inst):
        slack = rhs - lhs
        suites[name].append(slack)
        if slack < -tol * max(1.0, abs(lhs), abs(rhs)):
            failures[name].append({"lhs": lhs, "rhs": rhs, **inst})

    for _ in range(instance_count):
        S, n, alpha, table = _random_instance(rng, max_states, max_n)
        lam = float(rng.choice(lams))
        inst = {"S": S, "n": n, "alpha": alpha.tolist(), "table": table.tolist(), "lam": lam}
        # decoupling enumerates S^(k n) configurations
        n_dec = min(n, 4) if S == 3 else n
        inst_dec = dict(inst, n=n_dec)
        lhs, rhs = decoupling_sides(table, alpha, n_dec, "exp", lam)
        record("decoupling-exp", lhs, rhs, inst_dec)
        lhs, rhs = decoupling_sides(table, alpha, n_dec, "square")
        record("decoupling-square", lhs, rhs, inst_dec)
        laws = rng.integers(1, 5, size=(2, n_dec, S)).astype(float)
        laws /= laws.sum(axis=-1, keepdims=True)
        phi = rng.integers(-4, 5, size=(n_dec, n_dec, S, S)) / 4.0
        lhs = iterated_log_mgf_lhs(phi, laws, n_dec, 2)
        rhs = iterated_log_mgf_bound(phi, laws, n_dec, 2)
        record("iterated-mgf", lhs, rhs, dict(inst_dec, laws=laws.tolist(), phi=phi.tolist()))
        space = FiniteSpace(list(range(S)), rho=1.0 - np.eye(S))
        ref = finite_reference(space, alpha)
        W = TablePotential(table)
        lhs = log_mgf_exact(W, ref.alpha, n, lam, space)
        rhs = log_mgf_keybound(W, ref.alpha, lam, space)
        record("mgf-keybound", lhs, rhs, inst)
    out = []
    for name, slacks in suites.items():
        s = np.asarray(slacks)
        out.append(SuiteResult(name, len(s), len(failures[name]), float(s.min()),
                               float(np.median(s)), failures[name]))
    return out


# -- convergence --------------------------------------------------------------

@dataclass
class ConvergenceRow:
    n: int
    mean: float
    q10: float
    q50: float
    q90: float
    replicas: int


@dataclass
class ConvergenceReport:
    rows: list
    p: float
    tail_ok: bool
    targets: list
    decreasing: bool

    def table(self) -> list:
        return [[r.n, r.mean, r.q10, r.q50, r.q90, r.replicas] for r in self.rows]

    def columns(self):
        return ["n", "mean", "q10", "q50", "q90", "replicas"]

    def to_json(self) -> dict:
        return {"p": self.p, "tail_condition": self.tail_ok, "decreasing": self.decreasing,
                "columns": self.columns(), "rows": self.table(),
                "targets": [t.to_json() for t in self.targets]}


def _spin_targets(model, nu):
    m = float(nu.mean()[0])
    return [spin_measure(model, abs(m)), spin_measure(model, -abs(m))]


def _replica_distance(model, n, burn_in_sweeps, sigma, targets, p, rseed) -> float:
    if model.interactions:
        x = sample_mcmc(model, n, 0, burn_in_sweeps * n, 1, sigma=sigma, seed=rseed).final
    else:
        x = model.alpha.sample(np.random.default_rng(rseed), n,
                               jitter=model.space.kind == "euclidean")
    L = empirical_measure(model.space, x)
    return min(wasserstein(L, t, p) for t in targets)


def convergence_report(model: GibbsModel, n_list, replicas: int = 20, seed=0, p: float = 1.0,
                       targets=None, burn_in_sweeps: int = 20, sigma: float = 0.5
                       ) -> ConvergenceReport:
    """W_p(L_n, nu*) per n over independent replicas.

    Targets default to the minimizer of H_W (both signs for spin models);
    the distance is to the closest target.
    """
    tail = tail_condition_check(model.alpha, p, [1.0])
    tail_ok = all(t.passes for t in tail)
    if targets is None:
        best = minimize(model).nu
        targets = _spin_targets(model, best) if model.is_spin() else [best]
    rows = []
    ss = np.random.SeedSequence(seed)
    for n, nseed in zip(n_list, ss.spawn(len(n_list))):
        job = partial(_replica_distance, model, n, burn_in_sweeps, sigma, targets, p)
        d = np.asarray(parallel_map(job, nseed.spawn(replicas)))
        rows.append(ConvergenceRow(n, float(d.mean()), *map(float, np.quantile(d, [0.1, 0.5, 0.9])),
                                   replicas))
    means = [r.mean for r in rows]
    decreasing = all(b < a for a, b in zip(means, means[1:]))
    return ConvergenceReport(rows, p, tail_ok, list(targets), decreasing)


def grid_gaussian_target(model: GibbsModel) -> DiscreteMeasure:
    """Standard normal mass per grid cell (cell-average), on the model grid."""
    sp = model.space
    c = sp.centers()
    h = sp.width
    w = norm.cdf(c + h / 2) - norm.cdf(c - h / 2)
    return DiscreteMeasure(sp, c[:, None], w, normalize=True)
