"""Free energy H_W, rate function I_W, minimizer search, the critical-equation
fixed point and the stationary-equation residual."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _sp_minimize
from scipy.optimize import minimize_scalar
from scipy.special import gammaln, logsumexp, rel_entr

from .errors import (NormalizationDiverged, RequiresSmoothFamily, SearchSpaceUnsupported,
                     SpaceMismatch, TooLargeToEnumerate)
from .gibbs import (GibbsModel, _spin_log_terms, gibbs_log_probabilities,
                    log_partition_exact)
from .spaces import DiscreteMeasure, relative_entropy
from .ustats import enumerate_configurations
from .wasserstein import wasserstein

MAX_PRODUCT_ATOMS = 5e7


@dataclass
class InteractionEnergy:
    """Positive and negative parts of int W dnu^{(x)k}."""

    positive: float
    negative: float
    negative_part_diverges: bool

    @property
    def value(self) -> float:
        if self.negative_part_diverges or np.isinf(self.positive):
            return math.inf
        return self.positive - self.negative


def _product_values(W, nu: DiscreteMeasure):
    """W on supp(nu)^k and the matching product weights, positive atoms only."""
    keep = nu.weights > 0
    sup, w = nu.support[keep], nu.weights[keep]
    k = W.order
    if len(w) ** k > MAX_PRODUCT_ATOMS:
        raise TooLargeToEnumerate(f"{len(w)}^{k} product atoms")
    pts = []
    for j in range(k):
        shape = [1] * k
        shape[j] = len(w)
        if nu.space.kind == "finite":
            pts.append(sup.reshape(shape))
        else:
            pts.append(sup.reshape(shape + [sup.shape[1]]))
    vals = np.broadcast_to(W.values(nu.space, *pts), (len(w),) * k)
    prod = w
    for _ in range(k - 1):
        prod = np.multiply.outer(prod, w)
    return vals, prod


def interaction_energy_parts(W, nu: DiscreteMeasure) -> InteractionEnergy:
    vals, prod = _product_values(W, nu)
    pos = np.where(vals > 0, vals, 0.0)
    neg = np.where(vals < 0, -vals, 0.0)
    with np.errstate(invalid="ignore"):
        p = math.inf if np.any(np.isinf(pos)) else float(np.sum(prod * pos))
        q = math.inf if np.any(np.isinf(neg)) else float(np.sum(prod * neg))
    return InteractionEnergy(p, q, bool(np.isinf(q)))


def interaction_energy(W, nu: DiscreteMeasure) -> float:
    """int W^(k) dnu^{(x)k}; +inf when the positive part diverges.

    A divergent negative part is reported by :func:`interaction_energy_parts`
    and also yields +inf here (never -inf).
    """
    return interaction_energy_parts(W, nu).value


@dataclass
class FreeEnergyBreakdown:
    entropy: float
    interaction_terms: list
    total: float
    entropy_infinite: bool
    negative_part_diverges: bool
    normalized_rate: float | None = None

    def with_rate(self, inf_value: float) -> "FreeEnergyBreakdown":
        rate = self.total - inf_value if np.isfinite(self.total) else math.inf
        return FreeEnergyBreakdown(self.entropy, list(self.interaction_terms), self.total,
                                   self.entropy_infinite, self.negative_part_diverges, rate)

    def to_json(self) -> dict:
        return {"entropy": self.entropy, "interaction_terms": self.interaction_terms,
                "total": self.total, "normalized_rate": self.normalized_rate,
                "flags": {"entropy_infinite": self.entropy_infinite,
                          "negative_part_diverges": self.negative_part_diverges}}


def free_energy(model: GibbsModel, nu: DiscreteMeasure) -> FreeEnergyBreakdown:
    """H_W(nu) = H(nu|alpha) + sum_k W^(k)(nu), or +inf on the excluded branch."""
    if nu.space != model.space:
        raise SpaceMismatch(f"{nu.space!r} != {model.space!r}")
    ent = relative_entropy(nu, model.alpha)
    if np.isinf(ent):
        return FreeEnergyBreakdown(math.inf, [], math.inf, True, False)
    parts = [interaction_energy_parts(W, nu) for W in model.interactions]
    neg_div = any(p.negative_part_diverges for p in parts)
    terms = [p.value for p in parts]
    total = math.inf if neg_div else ent + float(sum(terms))
    return FreeEnergyBreakdown(ent, terms, total, False, neg_div)


def free_energy_value(model: GibbsModel, nu: DiscreteMeasure) -> float:
    return free_energy(model, nu).total


# -- finite-space helpers ---------------------------------------------------

def _tables(model: GibbsModel):
    return [W.tabulate(model.space) for W in model.interactions]


def _batch_free_energy(model: GibbsModel, weights: np.ndarray, tables=None) -> np.ndarray:
    """H_W for many weight vectors on a finite space, shape (B, S) -> (B,)."""
    weights = np.atleast_2d(weights)
    alpha = model.alpha.dense()
    out = rel_entr(weights, alpha).sum(axis=1)
    for T in (tables if tables is not None else _tables(model)):
        k = T.ndim
        if not np.all(np.isfinite(T)):
            raise TooLargeToEnumerate("batch evaluation needs finite tables")
        letters = "abcdefgh"[:k]
        spec = letters + "," + ",".join(f"z{c}" for c in letters) + "->z"
        out = out + np.einsum(spec, T, *([weights] * k), optimize=True)
    return out


def spin_measure(model: GibbsModel, m: float) -> DiscreteMeasure:
    """Two-point measure on {-1, +1} with mean m."""
    if not -1 <= m <= 1:
        raise ValueError("magnetization must lie in [-1, 1]")
    w = np.zeros(2)
    w[model.space.index(1)] = (1 + m) / 2
    w[model.space.index(-1)] = (1 - m) / 2
    return DiscreteMeasure(model.space, np.arange(2), w)


def magnetization(nu: DiscreteMeasure) -> float:
    return float(nu.mean()[0])


# -- minimization -----------------------------------------------------------

@dataclass
class MinimizerResult:
    nu: DiscreteMeasure
    inf_value: float
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = True
    label: str = "CE"
    residual: float | None = None
    candidates: list = field(default_factory=list)

    def to_json(self, trace: bool = False) -> dict:
        out = {"nu": self.nu.to_json(), "inf_value": self.inf_value, "method": self.method,
               "iterations": self.iterations, "converged": self.converged,
               "label": self.label, "residual": self.residual}
        if trace:
            out["residual_history"] = list(self.residuals)
            out["candidates"] = list(self.candidates)
        return out


def _simplex_mesh(S: int, steps: int) -> np.ndarray:
    """All weight vectors with entries in {0, 1/steps, ..., 1} summing to 1."""
    if S == 1:
        return np.ones((1, 1))
    rows = []
    for head in itertools.product(range(steps + 1), repeat=S - 2):
        rest = steps - sum(head)
        if rest < 0:
            continue
        last = np.arange(rest + 1)
        block = np.empty((rest + 1, S))
        block[:, :S - 2] = head
        block[:, S - 2] = last
        block[:, S - 1] = rest - last
        rows.append(block)
    return np.concatenate(rows) / steps


def _refine_simplex(model, w0, tables):
    """Local polish of a simplex point in softmax coordinates."""
    S = len(w0)
    support = w0 > 0
    idx = np.flatnonzero(support)
    if len(idx) == 1:
        return w0

    def f(z):
        w = np.zeros(S)
        w[idx] = np.exp(z - logsumexp(z))
        return float(_batch_free_energy(model, w, tables)[0])

    z0 = np.log(w0[idx])
    res = _sp_minimize(f, z0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000})
    w = np.zeros(S)
    w[idx] = np.exp(res.x - logsumexp(res.x))
    return w if f(res.x) <= f(z0) else w0


def minimize_grid_scan(model: GibbsModel, mesh: float = 1e-3) -> MinimizerResult:
    S = model.space.size if model.space.kind == "finite" else None
    if S is None or S > 4:
        raise SearchSpaceUnsupported("grid-scan needs a finite space with |S| <= 4")
    steps = int(round(1 / mesh))
    tables = _tables(model)
    if any(not np.all(np.isfinite(T)) for T in tables):
        raise SearchSpaceUnsupported("grid-scan needs finite interaction tables")
    pts = _simplex_mesh(S, steps)
    vals = np.concatenate([_batch_free_energy(model, pts[i:i + 200_000], tables)
                           for i in range(0, len(pts), 200_000)])
    best = pts[int(np.argmin(vals))]
    w = _refine_simplex(model, best, tables)
    nu = DiscreteMeasure(model.space, np.arange(S), w, normalize=True)
    return MinimizerResult(nu, free_energy_value(model, nu), "grid-scan",
                           iterations=len(pts))


def minimize_parametric_1d(model: GibbsModel, mesh: float = 1e-3) -> MinimizerResult:
    if not model.is_spin() and not (model.space.kind == "finite"
                                    and sorted(model.space.labels) == [-1, 1]):
        raise SearchSpaceUnsupported("parametric-1d needs a spin model on {-1, +1}")

    def f(m):
        return free_energy_value(model, spin_measure(model, float(m)))

    ms = np.linspace(-1.0, 1.0, int(round(2 / mesh)) + 1)
    vals = np.array([f(m) for m in ms])
    j = int(np.argmin(vals))
    lo, hi = ms[max(j - 1, 0)], ms[min(j + 1, len(ms) - 1)]
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    m = float(res.x) if res.fun <= vals[j] else float(ms[j])
    nu = spin_measure(model, m)
    return MinimizerResult(nu, f(m), "parametric-1d", iterations=len(ms))


def _default_starts(model: GibbsModel, count: int, seed) -> list:
    alpha = model.alpha
    starts = [alpha]
    rng = np.random.default_rng(seed)
    if model.space.kind == "finite":
        S = model.space.size
        for s in range(S):
            w = np.full(S, 0.1 / max(S - 1, 1))
            w[s] = 0.9 if S > 1 else 1.0
            starts.append(DiscreteMeasure(model.space, np.arange(S), w, normalize=True))
        while len(starts) < count:
            starts.append(DiscreteMeasure(model.space, np.arange(S),
                                          rng.dirichlet(np.ones(S)), normalize=True))
    else:
        x = alpha.coordinates()
        for shift in np.linspace(-2, 2, max(count - 1, 2)):
            logw = np.log(np.maximum(alpha.weights, 1e-300)) + shift * x[:, 0]
            starts.append(DiscreteMeasure(model.space, alpha.support,
                                          np.exp(logw - logsumexp(logw)), normalize=True))
    return starts[:max(count, 1)]


def minimize(model: GibbsModel, method: str = "auto", mesh: float = 1e-3, starts=None,
             n_starts: int = 6, seed=0, damping: float = 0.5, tol: float = 1e-8,
             max_iter: int = 10_000) -> MinimizerResult:
    """Search for inf H_W with a model-appropriate certified strategy."""
    if not model.interactions:
        nu = model.alpha
        return MinimizerResult(nu, free_energy_value(model, nu), "closed-form")
    if method == "auto":
        if model.is_spin():
            method = "parametric-1d"
        elif model.space.kind == "finite" and model.space.size <= 4:
            method = "grid-scan"
        else:
            method = "fixed-point"
    if method == "grid-scan":
        return minimize_grid_scan(model, mesh)
    if method == "parametric-1d":
        return minimize_parametric_1d(model, mesh)
    if method != "fixed-point":
        raise SearchSpaceUnsupported(f"unknown search method {method!r}")
    starts = starts if starts is not None else _default_starts(model, n_starts, seed)
    results = [fixed_point(model, s, damping, tol, max_iter) for s in starts]
    best = min(results, key=lambda r: (r.inf_value, not r.converged))
    best.candidates = [{"start": i, "inf_value": r.inf_value, "converged": r.converged,
                        "iterations": r.iterations} for i, r in enumerate(results)]
    return best


# -- critical map -------------------------------------------------------------

def critical_map_label(model: GibbsModel) -> str:
    return "extended-CE" if model.N > 2 else "CE"


def mean_field(model: GibbsModel, nu: DiscreteMeasure) -> np.ndarray:
    """sum_k k int W^(k)(x, y_2..y_k) nu(dy_2)..nu(dy_k) at every reference atom x."""
    keep = nu.weights > 0
    sup, w = nu.support[keep], nu.weights[keep]
    xs = model.reference.support
    out = np.zeros(len(xs))
    for W in model.interactions:
        k = W.order
        if len(xs) * len(w) ** (k - 1) > MAX_PRODUCT_ATOMS:
            raise TooLargeToEnumerate("mean field too large to tabulate")
        pts = []
        for j in range(k):
            shape = [1] * k
            shape[j] = len(xs) if j == 0 else len(w)
            arr = xs if j == 0 else sup
            pts.append(arr.reshape(shape) if model.space.kind == "finite"
                       else arr.reshape(shape + [arr.shape[1]]))
        vals = np.broadcast_to(W.values(model.space, *pts),
                               (len(xs),) + (len(w),) * (k - 1))
        acc = vals
        for _ in range(k - 1):
            acc = acc @ w
        out += k * acc
    return out


def _critical_log_weights(model: GibbsModel, nu: DiscreteMeasure) -> np.ndarray:
    if nu.space != model.space:
        raise SpaceMismatch(f"{nu.space!r} != {model.space!r}")
    with np.errstate(divide="ignore"):
        logw = np.log(model.alpha.weights)
    if model.interactions:
        with np.errstate(invalid="ignore"):
            logw = logw - mean_field(model, nu)
        logw = np.where(np.isnan(logw), -np.inf, logw)
    return logw


def _log_normalizer(logw) -> float:
    lz = float(logsumexp(logw))
    if not np.isfinite(lz):
        raise NormalizationDiverged(f"critical map normalizer is {lz}")
    return lz


def log_critical_normalizer(model: GibbsModel, nu: DiscreteMeasure) -> float:
    """log C_crit, the normalizer of T(nu) relative to alpha (not C_ref of alpha itself)."""
    return _log_normalizer(_critical_log_weights(model, nu))


def critical_map(model: GibbsModel, nu: DiscreteMeasure) -> DiscreteMeasure:
    """T(nu) proportional to alpha(x) exp(-sum_k k pi_nu W^(k)(x)) on the reference atoms."""
    logw = _critical_log_weights(model, nu)
    lz = _log_normalizer(logw)
    return DiscreteMeasure(model.space, model.reference.support, np.exp(logw - lz),
                           normalize=True)


def fixed_point(model: GibbsModel, nu0: DiscreteMeasure, damping: float = 0.5,
                tol: float = 1e-8, max_iter: int = 10_000, p: float = 1.0) -> MinimizerResult:
    """Damped iteration nu <- (1 - g) nu + g T(nu) until W_1 steps fall below tol."""
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    ref = model.reference
    nu = _on_reference(model, nu0)
    residuals = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        t = critical_map(model, nu)
        w = (1 - damping) * nu.weights + damping * t.weights
        new = DiscreteMeasure(model.space, ref.support, w, normalize=True)
        step = wasserstein(new, nu, p)
        residuals.append(step)
        nu = new
        if step <= tol:
            converged = True
            break
    residual = wasserstein(nu, critical_map(model, nu), p)
    return MinimizerResult(nu, free_energy_value(model, nu), "fixed-point", it, residuals,
                           converged, critical_map_label(model), residual)


def _on_reference(model: GibbsModel, nu: DiscreteMeasure) -> DiscreteMeasure:
    """Re-express nu on the full reference support (zero weights where absent)."""
    ref = model.reference
    if model.space.kind == "finite":
        return DiscreteMeasure(model.space, ref.support, nu.dense()[ref.support],
                               normalize=True)
    idx = {tuple(p): i for i, p in enumerate(ref.support)}
    w = np.zeros(len(ref.support))
    for pt, wt in zip(nu.support, nu.weights):
        j = idx.get(tuple(pt))
        if j is None:
            raise SpaceMismatch("measure has atoms off the reference grid")
        w[j] += wt
    return DiscreteMeasure(model.space, ref.support, w, normalize=True)


# -- stationary equation ---------------------------------------------------

def stationary_residual(model: GibbsModel, nu: DiscreteMeasure) -> float:
    """Discrete L^2 norm of rho'' + (rho (V' + 2 pi_nu d1W))' on interior cells.

    rho is the cell density of nu on the model grid; second-order central
    differences; the two boundary cells are excluded.
    """
    sp = model.space
    if sp.kind != "euclidean" or sp.dim != 1:
        raise RequiresSmoothFamily("stationary residual needs a 1-d euclidean grid")
    if any(W.order != 2 or not W.smooth for W in model.interactions):
        raise RequiresSmoothFamily("stationary residual needs smooth pair interactions")
    nu = _on_reference(model, nu)
    x = nu.support
    h = sp.width
    rho = nu.weights / h
    drift = np.asarray(model.confinement.grad(x), dtype=float)[:, 0]
    for W in model.interactions:
        g = W.grad_first(sp, x[:, None, :], x[None, :, :])[..., 0]
        drift = drift + 2.0 * (g @ nu.weights)
    flux = rho * drift
    lap = (rho[2:] - 2 * rho[1:-1] + rho[:-2]) / h ** 2
    div = (flux[2:] - flux[:-2]) / (2 * h)
    r = lap + div
    return float(np.sqrt(h * np.sum(r ** 2)))


def refinement_order(residuals, widths) -> list:
    """Observed convergence orders between consecutive refinements."""
    r, h = np.asarray(residuals, float), np.asarray(widths, float)
    return (np.log(r[:-1] / r[1:]) / np.log(h[:-1] / h[1:])).tolist()


# -- rate identification --------------------------------------------------------

def rate_identification(model: GibbsModel, nu: DiscreteMeasure, n: int) -> float:
    """(1/n) H(nu^{(x)n} | P_n) = H(nu|alpha) + sum_k W^(k)(nu) + (1/n) log Z~_n."""
    if model.space.kind != "finite":
        raise TooLargeToEnumerate("rate identification needs a finite space")
    fe = free_energy(model, nu)
    if not np.isfinite(fe.total):
        return math.inf
    return fe.total + log_partition_exact(model, n)


def rate_identification_direct(model: GibbsModel, nu: DiscreteMeasure, n: int) -> float:
    """(1/n) H(nu^{(x)n} | P_n) from its definition as a sum over configurations.

    Spin models sum over magnetization classes; other models enumerate S^n.
    """
    if nu.space != model.space:
        raise SpaceMismatch(f"{nu.space!r} != {model.space!r}")
    with np.errstate(divide="ignore"):
        lnu = np.log(nu.dense())
    if model.is_spin():
        # terms[k] = log of the total P_n-weight of the class with k plus-spins
        terms, _ = _spin_log_terms(model, n)
        logz = logsumexp(terms)
        k = np.arange(n + 1)
        ip, im = model.space.index(1), model.space.index(-1)
        logbinom = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        log_nu_cfg = k * lnu[ip] + (n - k) * lnu[im]
        log_p_cfg = terms - logbinom - logz
        mass = np.exp(logbinom + log_nu_cfg)
        with np.errstate(invalid="ignore"):
            contrib = np.where(mass > 0, mass * (log_nu_cfg - log_p_cfg), 0.0)
        return float(np.sum(contrib)) / n
    logp = gibbs_log_probabilities(model, n)
    S = model.space.size
    total = 0.0
    offset = 0
    for cfg in enumerate_configurations(S, n):
        lq = lnu[cfg].sum(axis=1)
        lp = logp[offset:offset + len(cfg)]
        offset += len(cfg)
        q = np.exp(lq)
        with np.errstate(invalid="ignore"):
            total += float(np.sum(np.where(q > 0, q * (lq - lp), 0.0)))
    return total / n
