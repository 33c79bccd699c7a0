"""Mean-field Gibbs measures: Hamiltonian, Metropolis and Langevin samplers,
exact and estimated log-partition functions.

The Gibbs measure on S^n has density exp(-n sum_k U_n(W^(k))) with respect
to alpha^{(x)n}; equivalently exp(-H_n) with respect to m^{(x)n}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache, partial
from itertools import permutations

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gammaln, logsumexp

from .errors import (Diverged, NoFiniteStartingPoint, SingularFamilyRejected,
                     NonDifferentiableFamily, NumericalFailure, TooFewParticles,
                     TooLargeToEnumerate)
from .parallel import parallel_map
from .potentials import (ConfinementPotential, QuadraticConfinement, QuadraticProductPotential,
                         ScaledPotential, SpinProductPotential)
from .spaces import (EuclideanSpace, FiniteSpace, ReferenceMeasure,
                     finite_reference, grid_reference)
from .ustats import (ENUMERATION_LIMIT, UStatCache, enumerate_configurations,
                     finite_tuple_sums, index_count, tuple_sum)

AUDIT_EVERY = 10_000
AUDIT_TOL = 1e-8
DIVERGENCE_RADIUS = 1e6


@dataclass(frozen=True)
class GibbsModel:
    """State space, reference measure alpha and interaction potentials.

    On euclidean spaces ``confinement`` is the continuous V used by the
    samplers (base measure Lebesgue); ``reference`` is its grid version used
    for measure-level computations.
    """

    space: FiniteSpace | EuclideanSpace
    reference: ReferenceMeasure
    interactions: tuple = ()
    confinement: ConfinementPotential | None = None

    def __post_init__(self):
        object.__setattr__(self, "interactions", tuple(self.interactions))
        orders = [W.order for W in self.interactions]
        if len(set(orders)) != len(orders):
            raise ValueError("interaction orders must be distinct")
        if any(k < 2 for k in orders):
            raise ValueError("interaction orders must be >= 2")
        if self.reference.space != self.space:
            raise ValueError("reference measure lives on a different space")
        if self.space.kind == "euclidean" and self.confinement is None:
            raise ValueError("euclidean models need a confinement potential")

    @property
    def N(self) -> int:
        return max((W.order for W in self.interactions), default=1)

    @property
    def alpha(self):
        return self.reference.alpha

    def scaled(self, s: float) -> "GibbsModel":
        """Same model with every interaction multiplied by s."""
        return replace(self, interactions=tuple(ScaledPotential(W, s) for W in self.interactions))

    def is_spin(self) -> bool:
        def base(W):
            return base(W.base) if isinstance(W, ScaledPotential) else W
        return (self.space.kind == "finite" and sorted(self.space.labels) == [-1, 1]
                and len(self.interactions) > 0
                and all(isinstance(base(W), SpinProductPotential) for W in self.interactions))

    def spin_beta(self) -> float:
        total = 0.0
        for W in self.interactions:
            scale = 1.0
            while isinstance(W, ScaledPotential):
                scale *= W.scale
                W = W.base
            total += scale * W.beta
        return total


def curie_weiss(beta: float, p_plus: float = 0.5) -> GibbsModel:
    """Spins in {-1, +1}, uniform alpha by default, W = -(beta/2) x y."""
    space = FiniteSpace([-1, 1])
    ref = finite_reference(space, [1 - p_plus, p_plus])
    return GibbsModel(space, ref, (SpinProductPotential(beta),))


def euclidean_model(confinement: ConfinementPotential, interactions=(), dim: int = 1,
                    box=(-8.0, 8.0), cells: int = 1001) -> GibbsModel:
    space = EuclideanSpace(dim, box, cells)
    return GibbsModel(space, grid_reference(space, confinement), tuple(interactions), confinement)


def quadratic_product_model(theta: float, box=(-8.0, 8.0), cells: int = 1001) -> GibbsModel:
    """V(x) = x^2/2 on R with W(x, y) = theta x y."""
    return euclidean_model(QuadraticConfinement(1.0), (QuadraticProductPotential(theta),),
                           1, box, cells)


def finite_model(space: FiniteSpace, alpha_weights, interactions=()) -> GibbsModel:
    return GibbsModel(space, finite_reference(space, alpha_weights), tuple(interactions))


# -- energy ----------------------------------------------------------------

def _confinement_values(model: GibbsModel, x) -> np.ndarray:
    if model.space.kind == "finite":
        return model.reference.V[x]
    return model.confinement(x)


def hamiltonian(model: GibbsModel, x) -> float:
    """H_n(x) = sum_i V(x_i) + n sum_k U_n(W^(k))."""
    x = model.space.validate_points(x)
    n = len(x)
    if n < model.N:
        raise TooFewParticles(f"need n >= {model.N}, got {n}")
    total = float(np.sum(_confinement_values(model, x)))
    for W in model.interactions:
        total += n * tuple_sum(W, model.space, x) / index_count(n, W.order)
    return total


def interaction_energy_n(model: GibbsModel, x) -> float:
    """n sum_k U_n(W^(k)), the interaction part of H_n."""
    x = model.space.validate_points(x)
    n = len(x)
    return float(sum(n * tuple_sum(W, model.space, x) / index_count(n, W.order)
                     for W in model.interactions))


@lru_cache(maxsize=32)
def _tuple_index(n: int, k: int) -> np.ndarray:
    return np.array(list(permutations(range(n), k)), dtype=np.intp).reshape(-1, k)


def grad_hamiltonian(model: GibbsModel, x) -> np.ndarray:
    """Analytic gradient of H_n, shape (n, d)."""
    if model.space.kind != "euclidean":
        raise NonDifferentiableFamily("gradients need a euclidean space")
    x = model.space.validate_points(x)
    n = len(x)
    if n < model.N:
        raise TooFewParticles(f"need n >= {model.N}, got {n}")
    g = np.array(model.confinement.grad(x), dtype=float)
    for W in model.interactions:
        if not W.smooth:
            raise NonDifferentiableFamily(f"family {W.family!r} is not differentiable")
        k = W.order
        idx = _tuple_index(n, k)
        # by symmetry each tuple contributes to its first index with weight k
        contrib = W.grad_first(model.space, x[idx[:, 0]], *[x[idx[:, j]] for j in range(1, k)])
        acc = np.zeros_like(g)
        np.add.at(acc, idx[:, 0], contrib)
        g += n * k / index_count(n, k) * acc
    return g


# -- Metropolis ------------------------------------------------------------

@dataclass
class SampleResult:
    samples: np.ndarray
    u_totals: np.ndarray
    acceptance_rate: float
    sigma: float | None
    seed: int | None
    n: int
    steps: int
    burn_in: int
    thinning: int
    final: np.ndarray
    counts_I: np.ndarray = field(default=None)

    def u_values(self) -> np.ndarray:
        """U_n(W^(k)) per emitted sample, one column per interaction."""
        return self.u_totals / self.counts_I

    def interaction_sum(self) -> np.ndarray:
        """sum_k U_n(W^(k)) per emitted sample."""
        return self.u_values().sum(axis=1) if self.u_totals.size else np.zeros(len(self.samples))

    def report(self) -> dict:
        return {"seed": self.seed, "n": self.n, "steps": self.steps, "burn_in": self.burn_in,
                "thinning": self.thinning, "acceptance_rate": self.acceptance_rate,
                "sigma": self.sigma, "emitted": int(len(self.samples))}


class MetropolisChain:
    """Single-site Metropolis chain targeting P_n.

    Finite spaces propose a uniformly resampled coordinate; euclidean spaces
    a Gaussian step of width ``sigma``. The accept test uses incremental
    U-statistic deltas only.
    """

    def __init__(self, model: GibbsModel, n: int, seed=0, x0=None, sigma: float = 0.5):
        if n < model.N:
            raise TooFewParticles(f"need n >= {model.N}, got {n}")
        self.model, self.n, self.sigma = model, n, float(sigma)
        self.rng = np.random.default_rng(seed)
        self.space = model.space
        self.finite = self.space.kind == "finite"
        x = self._initial(x0)
        self.cache = UStatCache(self.space, model.interactions, x)
        self.coef = np.array([n / c for c in self.cache.counts_I])
        self.accepted = 0
        self.proposed = 0
        self.steps_done = 0
        if self.finite:
            self.log_alpha = model.reference.log_alpha
            tables = [W.tabulate(self.space) for W in model.interactions]
            self._fast = all(t.ndim == 2 and np.all(np.isfinite(t)) for t in tables)
            self._tables = tables
        self._euclid_pairs = (not self.finite
                              and all(W.order == 2 for W in model.interactions))

    def _initial(self, x0):
        model, n = self.model, self.n
        if x0 is not None:
            x = model.space.validate_points(x0)
            if not np.isfinite(hamiltonian(model, x)):
                raise NoFiniteStartingPoint("supplied starting point has H_n = +inf")
            return np.array(x, copy=True)
        jitter = not self.finite
        for _ in range(100_000):
            x = model.alpha.sample(self.rng, n, jitter=jitter)
            if np.isfinite(hamiltonian(model, x)):
                return x
        raise NoFiniteStartingPoint("1e5 random initializations all gave H_n = +inf")

    @property
    def x(self) -> np.ndarray:
        return self.cache.x

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")

    def log_density(self) -> float:
        """-H_n up to the base-measure convention (log alpha terms on finite spaces)."""
        x = self.cache.x
        base = (self.log_alpha[x].sum() if self.finite
                else -float(np.sum(self.model.confinement(x))))
        return float(base - self.coef @ self.cache.totals)

    def audit(self):
        cached = self.cache.totals.copy()
        self.cache.recompute()
        fresh = self.cache.totals
        scale = np.maximum(1.0, np.abs(fresh))
        if np.any(np.abs(cached - fresh) > AUDIT_TOL * scale):
            raise NumericalFailure(f"U-statistic cache drifted: {cached} vs {fresh}")

    def run(self, steps: int, thinning: int = 0, tune: bool = False):
        """Advance ``steps`` proposals; return emitted (configurations, totals)."""
        if self.finite and self._fast:
            return self._run_finite_pairs(steps, thinning)
        return self._run_generic(steps, thinning, tune)

    def _pair_totals(self, i, new):
        # new and old partial sums in one kernel call; the totals are finite here
        x = self.cache.x
        pts = np.stack([new, x[i]])[:, None, :]
        totals = self.cache.totals.copy()
        for q, W in enumerate(self.model.interactions):
            with np.errstate(divide="ignore", invalid="ignore"):
                v = W.values(self.space, pts, x[None, :, :])
            v[:, i] = 0.0
            totals[q] += 2.0 * (v[0].sum() - v[1].sum())
        return totals

    def _emit_buffers(self, steps, thinning):
        m = steps // thinning if thinning else 0
        shape = (m,) + self.cache.x.shape
        return np.empty(shape, dtype=self.cache.x.dtype), np.empty((m, len(self.cache.totals)))

    def _run_generic(self, steps, thinning, tune):
        cache, rng, n = self.cache, self.rng, self.n
        out_x, out_t = self._emit_buffers(steps, thinning)
        S = self.space.size if self.finite else None
        window_acc = window = 0
        emitted = 0
        for step in range(1, steps + 1):
            i = int(rng.integers(n))
            old = cache.x[i]
            if self.finite:
                new = int(rng.integers(S))
                dbase = self.log_alpha[new] - self.log_alpha[old]
            else:
                new = old + self.sigma * rng.standard_normal(self.space.dim)
                v_new, v_old = self.model.confinement(np.stack([new, old]))
                dbase = float(v_old - v_new)
            self.proposed += 1
            window += 1
            accept = False
            if np.isfinite(dbase):
                totals = (self._pair_totals(i, new) if self._euclid_pairs
                          else cache.proposed_totals(i, new))
                if np.all(np.isfinite(totals)):
                    log_ratio = dbase - float(self.coef @ (totals - cache.totals))
                    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
                        accept = True
            if accept:
                cache.commit(i, new, totals)
                self.accepted += 1
                window_acc += 1
            if tune and window == 200:
                rate = window_acc / window
                if rate < 0.3:
                    self.sigma *= 0.8
                elif rate > 0.5:
                    self.sigma *= 1.25
                window = window_acc = 0
            self.steps_done += 1
            if self.steps_done % AUDIT_EVERY == 0:
                self.audit()
            if thinning and step % thinning == 0:
                out_x[emitted] = cache.x
                out_t[emitted] = cache.totals
                emitted += 1
        return out_x, out_t

    def _run_finite_pairs(self, steps, thinning):
        # pair interactions with finite tables: keep field[q][s] = sum_j W_q(s, x_j)
        cache, n = self.cache, self.n
        S = self.space.size
        tables = [t.tolist() for t in self._tables]
        coef = self.coef.tolist()
        log_alpha = self.log_alpha.tolist()
        x = cache.x.tolist()
        counts = np.bincount(cache.x, minlength=S).astype(float)
        fields = [(np.asarray(t) @ counts).tolist() for t in self._tables]
        totals = cache.totals.tolist()
        Q = len(tables)
        out_x, out_t = self._emit_buffers(steps, thinning)
        emitted = 0
        accepted = 0
        block = 65536
        done = 0
        while done < steps:
            m = min(block, steps - done)
            I = self.rng.integers(n, size=m).tolist()
            B = self.rng.integers(S, size=m).tolist()
            logu = np.log(self.rng.random(m)).tolist()
            for t in range(m):
                i, b = I[t], B[t]
                a = x[i]
                if b != a:
                    lr = log_alpha[b] - log_alpha[a]
                    deltas = []
                    for q in range(Q):
                        T = tables[q]
                        f = fields[q]
                        d = 2.0 * ((f[b] - T[b][a]) - (f[a] - T[a][a]))
                        deltas.append(d)
                        lr -= coef[q] * d
                    if lr >= 0 or logu[t] < lr:
                        x[i] = b
                        accepted += 1
                        for q in range(Q):
                            T = tables[q]
                            f = fields[q]
                            for s in range(S):
                                f[s] += T[s][b] - T[s][a]
                            totals[q] += deltas[q]
                else:
                    accepted += 1
                if thinning and (done + t + 1) % thinning == 0:
                    out_x[emitted] = x
                    out_t[emitted] = totals
                    emitted += 1
            done += m
        self.proposed += steps
        self.accepted += accepted
        cache.x[:] = x
        cache.counts = np.bincount(cache.x, minlength=S).astype(float)
        cache.totals = np.asarray(totals, dtype=float)
        before = self.steps_done
        self.steps_done += steps
        if self.steps_done // AUDIT_EVERY > before // AUDIT_EVERY:
            self.audit()
        return out_x, out_t


def sample_mcmc(model: GibbsModel, n: int, steps: int, burn_in: int = 0, thinning: int = 1,
                sigma: float = 0.5, seed=0, x0=None, tune: bool = True) -> SampleResult:
    """Run a Metropolis chain and return the emitted configurations.

    ``steps`` counts single-site proposals after burn-in; one configuration
    is emitted every ``thinning`` proposals. On euclidean spaces the proposal
    width is tuned during burn-in toward acceptance 0.3-0.5, then frozen.
    """
    chain = MetropolisChain(model, n, seed, x0, sigma)
    if burn_in:
        chain.run(burn_in, 0, tune=tune and not chain.finite)
    acc0, prop0 = chain.accepted, chain.proposed
    xs, ts = chain.run(steps, thinning)
    rate = (chain.accepted - acc0) / max(1, chain.proposed - prop0)
    return SampleResult(xs, ts, rate, None if chain.finite else chain.sigma, seed, n, steps,
                        burn_in, thinning, chain.x.copy(), chain.cache.counts_I.copy())


# -- Langevin ----------------------------------------------------------------

@dataclass(frozen=True)
class LangevinConfig:
    dt: float = 1e-3
    horizon: float = 50.0
    integrator: str = "euler-maruyama"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if self.horizon < self.dt:
            raise ValueError("horizon must be at least one time step")
        if self.integrator != "euler-maruyama":
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Trajectory:
    times: np.ndarray
    configurations: np.ndarray
    seed: int | None


def simulate_sde(model: GibbsModel, n: int, config: LangevinConfig = LangevinConfig(),
                 seed=0, x0=None, record_every: int = 100, noise: bool = True,
                 force: bool = False) -> Trajectory:
    """Euler-Maruyama for dX = sqrt(2) dB - grad H_n(X) dt."""
    if model.space.kind != "euclidean":
        raise NonDifferentiableFamily("Langevin dynamics need a euclidean space")
    singular = [W.family for W in model.interactions if getattr(W, "singular", False)]
    if singular and not force:
        raise SingularFamilyRejected(f"singular families {singular}; use the Metropolis "
                                     "sampler or pass force=True")
    rng = np.random.default_rng(seed)
    if x0 is None:
        x = model.alpha.sample(rng, n, jitter=True)
    else:
        x = np.array(model.space.validate_points(x0), dtype=float)
    dt = config.dt
    amp = math.sqrt(2 * dt) if noise else 0.0
    times, frames = [0.0], [x.copy()]
    for step in range(1, config.steps + 1):
        g = grad_hamiltonian(model, x)
        x = x - g * dt
        if noise:
            x = x + amp * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_RADIUS:
            raise Diverged(f"trajectory left the ball of radius {DIVERGENCE_RADIUS:g} at "
                           f"t={step * dt:g}; try a smaller time step")
        if step % record_every == 0:
            times.append(step * dt)
            frames.append(x.copy())
    return Trajectory(np.asarray(times), np.asarray(frames), seed)


# -- partition function -----------------------------------------------------

def _spin_log_terms(model: GibbsModel, n: int):
    """Log weights of magnetization classes k = #(+1) for spin-product models."""
    beta = model.spin_beta()
    ip = model.space.index(1)
    im = model.space.index(-1)
    la = model.reference.log_alpha
    k = np.arange(n + 1)
    M = 2.0 * k - n
    logbinom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    with np.errstate(invalid="ignore"):
        logp = np.where(k > 0, k * la[ip], 0.0) + np.where(n - k > 0, (n - k) * la[im], 0.0)
    return logbinom + logp + beta * (M ** 2 - n) / (2.0 * (n - 1)), M


def _enumeration_log_terms(model: GibbsModel, n: int):
    S = model.space.size
    if S ** n > ENUMERATION_LIMIT:
        raise TooLargeToEnumerate(f"{S}^{n} configurations")
    tables = [(W.tabulate(model.space), n / index_count(n, W.order)) for W in model.interactions]
    la = model.reference.log_alpha
    out = []
    for cfg in enumerate_configurations(S, n):
        counts = np.stack([(cfg == s).sum(axis=1) for s in range(S)], axis=1)
        energy = np.zeros(len(cfg))
        for T, c in tables:
            energy += c * finite_tuple_sums(T, counts)
        logw = la[cfg].sum(axis=1)
        with np.errstate(invalid="ignore"):
            out.append(np.where(np.isneginf(logw), -np.inf, logw - energy))
    return np.concatenate(out)


def gibbs_log_probabilities(model: GibbsModel, n: int) -> np.ndarray:
    """log P_n(x) for every configuration, enumeration order of S^n."""
    terms = _enumeration_log_terms(model, n)
    return terms - logsumexp(terms)


def log_partition_exact(model: GibbsModel, n: int, method: str = "auto") -> float:
    """(1/n) log Z~_n, Z~_n = E_{alpha^n} exp(-n sum_k U_n(W^(k))).

    Spin-product models use the sum over magnetization classes (n up to
    1e5); other finite models are enumerated (|S|^n <= 1e7).
    """
    if model.space.kind != "finite":
        raise TooLargeToEnumerate("exact partition functions need a finite space")
    if n < model.N:
        raise TooFewParticles(f"need n >= {model.N}, got {n}")
    if not model.interactions:
        return 0.0
    if method in ("auto", "spin") and model.is_spin():
        if n > 100_000:
            raise TooLargeToEnumerate("magnetization-class sum limited to n <= 1e5")
        terms, _ = _spin_log_terms(model, n)
        return float(logsumexp(terms)) / n
    if method == "spin":
        raise ValueError("magnetization-class reduction needs a spin-product model")
    return float(logsumexp(_enumeration_log_terms(model, n))) / n


def spin_mean_interaction(model: GibbsModel, n: int) -> float:
    """Exact E_{P_n}[sum_k U_n(W^(k))] for a spin-product model."""
    terms, M = _spin_log_terms(model, n)
    p = np.exp(terms - logsumexp(terms))
    beta = model.spin_beta()
    U = -0.5 * beta * (M ** 2 - n) / (n * (n - 1))
    return float(p @ U)


@dataclass
class PartitionEstimate:
    value: float
    stderr: float
    schedule: np.ndarray
    point_means: np.ndarray
    point_stderrs: np.ndarray
    replica_values: np.ndarray
    quadrature: str = "trapezoid"

    @property
    def resolution(self) -> float:
        return float(np.max(np.diff(self.schedule))) if len(self.schedule) > 1 else 0.0

    def report(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "quadrature": self.quadrature,
                "resolution": self.resolution, "schedule": self.schedule.tolist(),
                "point_means": self.point_means.tolist(),
                "point_stderrs": self.point_stderrs.tolist()}


def _ti_replica(model, n, schedule, sweeps, burn_in_sweeps, thin, sigma, rseed) -> np.ndarray:
    # one chain walks the whole schedule, warm-started from the previous point
    out = np.zeros(len(schedule))
    x0 = None
    for j, (sj, pseed) in enumerate(zip(schedule, rseed.spawn(len(schedule)))):
        res = sample_mcmc(model.scaled(sj), n, sweeps * n, burn_in_sweeps * n, thin,
                          sigma=sigma, seed=pseed, x0=x0)
        # the integrand is the unscaled interaction, measured under the scaled law
        out[j] = np.mean([interaction_energy_n(model, x) for x in res.samples]) / n
        x0 = res.final
    return out


def log_partition_estimate(model: GibbsModel, n: int, schedule=None, replicas: int = 4,
                           seed=0, sweeps: int = 200, burn_in_sweeps: int = 50,
                           thinning: int | None = None, sigma: float = 0.5) -> PartitionEstimate:
    """Thermodynamic integration of (1/n) log Z~_n over the interaction scale.

    (1/n) log Z~_n = -int_0^1 E_s[sum_k U_n(W^(k))] ds where E_s is the Gibbs
    measure with interactions scaled by s. Each replica runs one chain
    through the whole schedule (warm-started from the previous point); the
    error bar is the spread of the per-replica integrals.
    """
    s = np.linspace(0.0, 1.0, 21) if schedule is None else np.asarray(schedule, dtype=float)
    if len(s) < 10:
        raise ValueError("schedule needs at least 10 interpolation points")
    if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0):
        raise ValueError("schedule must increase from 0 to 1")
    if not model.interactions:
        z = np.zeros(len(s))
        return PartitionEstimate(0.0, 0.0, s, z, z, np.zeros(replicas))
    job = partial(_ti_replica, model, n, s, sweeps, burn_in_sweeps, thinning or n, sigma)
    means = np.array(parallel_map(job, np.random.SeedSequence(seed).spawn(replicas)))
    integrals = -trapezoid(means, s, axis=1)
    value = float(integrals.mean())
    se = float(integrals.std(ddof=1) / math.sqrt(replicas)) if replicas > 1 else float("inf")
    pm = means.mean(axis=0)
    ps = means.std(axis=0, ddof=1) / math.sqrt(replicas) if replicas > 1 else np.full(len(s), np.inf)
    return PartitionEstimate(value, se, s, pm, ps, integrals)
