"""Confinement and k-body interaction potentials.

Interaction potentials take values in (-inf, +inf]. They are evaluated on
space-native points (indices for finite spaces, coordinate arrays for
euclidean spaces) through :meth:`InteractionPotential.values`, which
broadcasts over leading axes. Singular families are +inf on the diagonal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ArityMismatch, BudgetExhausted, ConfigError,
                     NonDifferentiableFamily, SingularConfiguration)
from .spaces import DiscreteMeasure, ReferenceMeasure

MC_BLOCK = 100_000


# -- confinement ---------------------------------------------------------

class ConfinementPotential:
    family = "custom"
    smooth = False

    def __call__(self, x) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NonDifferentiableFamily(f"no gradient for confinement family {self.family!r}")


class QuadraticConfinement(ConfinementPotential):
    """V(x) = a |x - c|^2 / 2."""

    family = "quadratic"
    smooth = True

    def __init__(self, a: float = 1.0, center: float = 0.0):
        self.a = float(a)
        self.center = center

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.a * np.sum((x - self.center) ** 2, axis=-1)

    def grad(self, x):
        return self.a * (np.asarray(x, dtype=float) - self.center)

    def to_config(self):
        return {"family": "quadratic", "a": self.a}


class TableConfinement(ConfinementPotential):
    """Tabulated V indexed by finite-space point or grid cell."""

    family = "table"

    def __init__(self, values):
        self.table = np.asarray(values, dtype=float)

    def __call__(self, idx):
        return self.table[np.asarray(idx)]

    def to_config(self):
        return {"family": "table", "values": self.table.tolist()}


def confinement_from_config(cfg: dict, path=("confinement",)) -> ConfinementPotential:
    fam = cfg.get("family")
    if fam == "quadratic":
        return QuadraticConfinement(cfg.get("a", 1.0), cfg.get("center", 0.0))
    if fam == "zero":
        return QuadraticConfinement(0.0)
    if fam == "table":
        return TableConfinement(cfg["values"])
    raise ConfigError(f"unknown confinement family {fam!r}", list(path) + ["family"])


# -- interactions --------------------------------------------------------

class InteractionPotential:
    """Symmetric function of ``order`` points with values in (-inf, +inf]."""

    family = "custom"
    order = 2
    singular = False
    smooth = False

    def _kernel(self, space, *pts) -> np.ndarray:
        raise NotImplementedError

    def values(self, space, *pts) -> np.ndarray:
        return np.asarray(self._kernel(space, *pts), dtype=float)

    def evaluate(self, space, *pts):
        if len(pts) != self.order:
            raise ArityMismatch(f"expected {self.order} points, got {len(pts)}")
        pts = [space.validate_points(p) if np.ndim(p) else p for p in pts]
        out = self.values(space, *pts)
        return float(out) if np.ndim(out) == 0 else out

    def tabulate(self, space) -> np.ndarray:
        """Values on all of S^k for a finite space."""
        idx = np.indices((space.size,) * self.order)
        return self.values(space, *idx)

    def grad_first(self, space, x, *others) -> np.ndarray:
        """Gradient in the first argument (euclidean coordinates)."""
        raise NonDifferentiableFamily(f"family {self.family!r} has no gradient")

    def to_config(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.to_config().items()
                         if k not in ("family", "values"))
        return f"{type(self).__name__}({args})"


def _coords(space, p):
    return space.coordinates(p)


def _point_shape(space, p):
    s = np.shape(p)
    return s if space.kind == "finite" else s[:-1]


class _DistanceFamily(InteractionPotential):
    order = 2

    def _kernel(self, space, a, b):
        r = np.asarray(space.distance(a, b), dtype=float)
        return self.of_distance(r)

    def of_distance(self, r):
        raise NotImplementedError

    def _diff(self, space, x, y):
        if space.kind != "euclidean":
            raise NonDifferentiableFamily("gradients need a euclidean space")
        d = np.asarray(x, float) - np.asarray(y, float)
        r2 = np.sum(d * d, axis=-1, keepdims=True)
        return d, r2


class PowerLawPotential(_DistanceFamily):
    """b / rho^beta (Coulomb for beta = 1)."""

    family = "power_law"
    singular = True
    smooth = True

    def __init__(self, b: float = 1.0, beta: float = 1.0):
        if b <= 0 or beta <= 0:
            raise ValueError("power-law potential needs b > 0 and beta > 0")
        self.b, self.beta = float(b), float(beta)

    def of_distance(self, r):
        with np.errstate(divide="ignore"):
            return np.where(r > 0, self.b * np.power(np.where(r > 0, r, 1.0), -self.beta),
                            np.inf)

    def grad_first(self, space, x, y):
        d, r2 = self._diff(space, x, y)
        if np.any(r2 == 0):
            raise SingularConfiguration("coincident particles under power-law potential")
        return -self.b * self.beta * r2 ** (-self.beta / 2 - 1) * d

    def to_config(self):
        return {"order": 2, "family": "power_law", "b": self.b, "beta": self.beta}


class LogPotential(_DistanceFamily):
    """-b log rho."""

    family = "log"
    singular = True
    smooth = True

    def __init__(self, b: float = 1.0):
        if b <= 0:
            raise ValueError("log potential needs b > 0")
        self.b = float(b)

    def of_distance(self, r):
        with np.errstate(divide="ignore"):
            return np.where(r > 0, -self.b * np.log(np.where(r > 0, r, 1.0)), np.inf)

    def grad_first(self, space, x, y):
        d, r2 = self._diff(space, x, y)
        if np.any(r2 == 0):
            raise SingularConfiguration("coincident particles under log potential")
        return -self.b * d / r2

    def to_config(self):
        return {"order": 2, "family": "log", "b": self.b}


class HardCorePotential(_DistanceFamily):
    """+inf when two points are closer than ``radius``, else 0."""

    family = "hard_core"
    singular = True

    def __init__(self, radius: float):
        self.radius = float(radius)

    def of_distance(self, r):
        return np.where(r < self.radius, np.inf, 0.0)

    def to_config(self):
        return {"order": 2, "family": "hard_core", "radius": self.radius}


class GaussianPotential(_DistanceFamily):
    """b exp(-rho^2 / (2 s^2)); a bounded smooth pair kernel."""

    family = "gaussian"
    smooth = True

    def __init__(self, b: float = 1.0, scale: float = 1.0):
        self.b, self.scale = float(b), float(scale)

    def of_distance(self, r):
        return self.b * np.exp(-0.5 * (r / self.scale) ** 2)

    def grad_first(self, space, x, y):
        d, r2 = self._diff(space, x, y)
        return -self.b / self.scale ** 2 * np.exp(-0.5 * r2 / self.scale ** 2) * d

    def to_config(self):
        return {"order": 2, "family": "gaussian", "b": self.b, "scale": self.scale}


class QuadraticProductPotential(InteractionPotential):
    """theta <x, y>."""

    family = "quadratic_product"
    smooth = True

    def __init__(self, theta: float):
        self.theta = float(theta)

    def _kernel(self, space, a, b):
        return self.theta * np.sum(_coords(space, a) * _coords(space, b), axis=-1)

    def grad_first(self, space, x, y):
        return self.theta * np.asarray(y, dtype=float)

    def to_config(self):
        return {"order": 2, "family": "quadratic_product", "theta": self.theta}


class SpinProductPotential(InteractionPotential):
    """-(beta/2) x y on spins; the Curie-Weiss interaction."""

    family = "spin_product"

    def __init__(self, beta: float):
        self.beta = float(beta)

    def _kernel(self, space, a, b):
        return -0.5 * self.beta * np.sum(_coords(space, a) * _coords(space, b), axis=-1)

    def to_config(self):
        return {"order": 2, "family": "spin_product", "beta": self.beta}


class ProductPotential(InteractionPotential):
    """theta * x_1 * ... * x_k for scalar coordinates."""

    family = "product"
    smooth = True

    def __init__(self, theta: float, order: int = 3):
        if order < 2:
            raise ValueError("order must be >= 2")
        self.theta = float(theta)
        self.order = int(order)

    def _kernel(self, space, *pts):
        out = self.theta
        for p in pts:
            out = out * _coords(space, p)[..., 0]
        return out

    def grad_first(self, space, x, *others):
        out = np.full(np.shape(x), self.theta)
        for o in others:
            out = out * np.asarray(o, dtype=float)
        return out

    def to_config(self):
        return {"order": self.order, "family": "product", "theta": self.theta}


class ConstantPotential(InteractionPotential):
    family = "constant"
    smooth = True

    def __init__(self, c: float, order: int = 2):
        self.c = float(c)
        self.order = int(order)

    def _kernel(self, space, *pts):
        shape = np.broadcast_shapes(*[_point_shape(space, p) for p in pts])
        return np.full(shape, self.c)

    def grad_first(self, space, x, *others):
        return np.zeros(np.shape(x))

    def to_config(self):
        return {"order": self.order, "family": "constant", "c": self.c}


class TablePotential(InteractionPotential):
    """Tabulated potential on a finite space, a k-dimensional array."""

    family = "table"

    def __init__(self, values, check_symmetry: bool = True):
        t = np.asarray(values, dtype=float)
        if t.ndim < 2 or len(set(t.shape)) != 1:
            raise ValueError("table must be a k-dimensional cube, k >= 2")
        if np.any(np.isnan(t)) or np.any(t == -np.inf):
            raise ValueError("table values must lie in (-inf, +inf]")
        if check_symmetry and not is_symmetric_table(t):
            raise ValueError("table is not symmetric under coordinate permutations")
        self.table = t
        self.table.setflags(write=False)
        self.order = t.ndim

    @classmethod
    def symmetrized(cls, values) -> "TablePotential":
        t = np.asarray(values, dtype=float)
        perms = list(_permutations(t.ndim))
        return cls(sum(np.transpose(t, p) for p in perms) / len(perms))

    def _kernel(self, space, *pts):
        return self.table[tuple(np.asarray(p) for p in pts)]

    def tabulate(self, space):
        return self.table

    def to_config(self):
        return {"order": self.order, "family": "table", "values": self.table.tolist()}


def _permutations(k):
    from itertools import permutations
    return permutations(range(k))


def is_symmetric_table(t, tol: float = 1e-12) -> bool:
    for p in _permutations(t.ndim):
        tp = np.transpose(t, p)
        both_inf = np.isinf(t) & np.isinf(tp)
        diff = np.where(both_inf, 0.0, np.abs(np.where(both_inf, 0, t) - np.where(both_inf, 0, tp)))
        if np.any(np.isnan(diff)) or np.any(diff > tol):
            return False
    return True


class ScaledPotential(InteractionPotential):
    """s * W (s >= 0), with 0 * inf read as 0."""

    def __init__(self, base: InteractionPotential, scale: float):
        if scale < 0:
            raise ValueError("scale must be nonnegative")
        self.base, self.scale = base, float(scale)
        self.order = base.order
        self.family = base.family
        self.singular = base.singular and scale > 0
        self.smooth = base.smooth

    def _kernel(self, space, *pts):
        if self.scale == 0:
            return np.zeros(np.shape(self.base.values(space, *pts)))
        return self.scale * self.base.values(space, *pts)

    def tabulate(self, space):
        t = self.base.tabulate(space)
        return np.zeros_like(t) if self.scale == 0 else self.scale * t

    def grad_first(self, space, x, *others):
        return self.scale * self.base.grad_first(space, x, *others)

    def to_config(self):
        return {**self.base.to_config(), "scale": self.scale}


class TruncatedPotential(InteractionPotential):
    """(-L) v (W ^ L); with ``lower=False`` only the upper clamp W ^ L."""

    family = "truncated"

    def __init__(self, base: InteractionPotential, level: float, lower: bool = True):
        if not level > 0:
            raise ValueError("truncation level must be positive")
        self.base, self.level, self.lower = base, float(level), lower
        self.order = base.order

    def _kernel(self, space, *pts):
        w = self.base.values(space, *pts)
        return np.clip(w, -self.level if self.lower else None, self.level)

    def tabulate(self, space):
        return np.clip(self.base.tabulate(space), -self.level if self.lower else None, self.level)

    def to_config(self):
        return {"order": self.order, "family": "truncated", "level": self.level,
                "lower": self.lower, "base": self.base.to_config()}


class PartPotential(InteractionPotential):
    """Positive part W+ = W v 0 or negative part W- = (-W) v 0."""

    family = "part"

    def __init__(self, base: InteractionPotential, sign: str):
        if sign not in ("+", "-"):
            raise ValueError("sign must be '+' or '-'")
        self.base, self.sign = base, sign
        self.order = base.order
        self.singular = base.singular and sign == "+"

    def _kernel(self, space, *pts):
        w = self.base.values(space, *pts)
        return np.maximum(w, 0.0) if self.sign == "+" else np.maximum(-w, 0.0)

    def to_config(self):
        return {"order": self.order, "family": "part", "sign": self.sign,
                "base": self.base.to_config()}


def positive_part(W):
    return PartPotential(W, "+")


def negative_part(W):
    return PartPotential(W, "-")


def truncate(W: InteractionPotential, level: float, lower: bool = True) -> TruncatedPotential:
    return TruncatedPotential(W, level, lower)


def potential_from_config(cfg: dict, path=("potential",)) -> InteractionPotential:
    path = list(path)
    if not isinstance(cfg, dict):
        raise ConfigError("potential must be a table/object", path)
    if "family" not in cfg:
        raise ConfigError("missing required field 'family'", path)
    fam = cfg["family"]
    try:
        if fam == "power_law":
            W = PowerLawPotential(cfg.get("b", 1.0), cfg.get("beta", 1.0))
        elif fam == "log":
            W = LogPotential(cfg.get("b", 1.0))
        elif fam == "spin_product":
            W = SpinProductPotential(cfg["beta"])
        elif fam == "quadratic_product":
            W = QuadraticProductPotential(cfg["theta"])
        elif fam == "product":
            W = ProductPotential(cfg["theta"], cfg.get("order", 3))
        elif fam == "constant":
            W = ConstantPotential(cfg["c"], cfg.get("order", 2))
        elif fam == "gaussian":
            W = GaussianPotential(cfg.get("b", 1.0), cfg.get("scale", 1.0))
        elif fam == "hard_core":
            W = HardCorePotential(cfg["radius"])
        elif fam == "table":
            W = TablePotential(cfg["values"])
        else:
            raise ConfigError(f"unknown interaction family {fam!r}", path + ["family"])
    except KeyError as exc:
        raise ConfigError(f"missing required field {exc.args[0]!r}", path) from None
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    if "order" in cfg and cfg["order"] != W.order:
        raise ConfigError(f"family {fam!r} has order {W.order}", path + ["order"])
    if cfg.get("scale", 1.0) != 1.0:
        W = ScaledPotential(W, cfg["scale"])
    return W


def check_symmetry(W: InteractionPotential, space, rng: np.random.Generator,
                   trials: int = 100, tol: float = 1e-12) -> bool:
    """Compare W on random tuples against all coordinate permutations."""
    pts = [_random_points(space, rng, trials) for _ in range(W.order)]
    ref = W.values(space, *pts)
    for p in _permutations(W.order):
        other = W.values(space, *[pts[i] for i in p])
        same_inf = np.isinf(ref) & np.isinf(other)
        diff = np.abs(np.where(same_inf, 0.0, ref) - np.where(same_inf, 0.0, other))
        if np.any(~np.isfinite(diff)) or np.any(diff > tol * np.maximum(1.0, np.abs(np.where(same_inf, 0, ref)))):
            return False
    return True


def _random_points(space, rng, size):
    if space.kind == "finite":
        return rng.integers(space.size, size=size)
    lo, hi = space.box
    return rng.uniform(lo, hi, size=(size, space.dim))


# -- Monte Carlo diagnostics ---------------------------------------------

def _sampler_for(alpha):
    """Return draw(rng, size) for a measure, reference measure or callable."""
    if isinstance(alpha, ReferenceMeasure):
        alpha = alpha.alpha
    if isinstance(alpha, DiscreteMeasure):
        return lambda rng, size: alpha.sample(rng, size, jitter=True)
    if callable(alpha):
        return alpha
    raise TypeError("alpha must be a measure or a sampler callable")


def _draw_tuples(alpha, k, budget, seed):
    draw = _sampler_for(alpha)
    blocks = max(1, math.ceil(budget / MC_BLOCK))
    seqs = np.random.SeedSequence(seed).spawn(blocks)
    out = [[] for _ in range(k)]
    left = budget
    for ss in seqs:
        rng = np.random.default_rng(ss)
        size = min(MC_BLOCK, left)
        for j in range(k):
            out[j].append(draw(rng, size))
        left -= size
    return [np.concatenate(o) for o in out]


def log_mean_exp_jackknife(a):
    """log of mean(exp(a)) and its jackknife standard error, in log domain."""
    a = np.asarray(a, dtype=float).ravel()
    n = len(a)
    if np.any(a == np.inf):
        return np.inf, np.inf
    amax = a.max()
    e = np.exp(a - amax)
    s = e.sum()
    value = math.log(s / n) + amax
    if n < 2:
        return value, np.inf
    rest = np.maximum(s - e, np.finfo(float).tiny * s)
    loo = np.log(rest / (n - 1))
    var = (n - 1) / n * np.sum((loo - loo.mean()) ** 2)
    return value, float(np.sqrt(var))


def _heavy_tail(summands, top: float = 1e-3, share: float = 0.5) -> bool:
    """True when the largest ``top`` fraction of summands carries over ``share`` of the sum."""
    e = np.asarray(summands, dtype=float).ravel()
    if len(e) == 0:
        return False
    if not np.all(np.isfinite(e)):
        return True
    total = e.sum()
    if total <= 0:
        return False
    kth = max(1, math.ceil(top * len(e)))
    big = np.partition(e, len(e) - kth)[len(e) - kth:]
    return bool(big.sum() > share * total)


@dataclass
class ExpIntegrability:
    estimate: float
    stderr: float
    log_estimate: float
    log_stderr: float
    unstable: bool
    samples: int
    seed: int | None


def _as_kernel(f, space):
    if isinstance(f, InteractionPotential):
        if space is None:
            raise ValueError("space is required to evaluate a potential")
        return f.order, (lambda *pts: f.values(space, *pts))
    k, fn = f
    return k, fn


def check_exp_integrability(f, alpha, lam: float, sample_budget: int = 100_000,
                            seed: int = 0, space=None) -> ExpIntegrability:
    """Monte Carlo estimate of E exp(lam f(X_1..X_k)), X_i i.i.d. alpha.

    ``f`` is an :class:`InteractionPotential` (requires ``space``) or a pair
    ``(k, callable)``. The result is flagged unstable when the top 0.1% of
    summands carry more than half of the total.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if space is None and isinstance(alpha, (DiscreteMeasure, ReferenceMeasure)):
        space = alpha.space
    k, fn = _as_kernel(f, space)
    pts = _draw_tuples(alpha, k, sample_budget, seed)
    vals = np.asarray(fn(*pts), dtype=float)
    a = lam * vals
    log_est, log_se = log_mean_exp_jackknife(a)
    est = math.exp(log_est) if log_est < 709 else np.inf
    se = est * log_se if np.isfinite(est) else np.inf
    unstable = True if np.any(a == np.inf) else _heavy_tail(np.exp(a - a.max()))
    return ExpIntegrability(est, se, log_est, log_se, unstable, len(vals), seed)


@dataclass
class TruncationLevel:
    level: float
    m: int
    estimate: float
    stderr: float
    unstable: bool
    seed: int | None
    history: list = field(default_factory=list)


def select_truncation_level(W: InteractionPotential, m: int, alpha,
                            sample_budget: int = 100_000, seed: int = 0,
                            space=None, max_exponent: int = 60) -> TruncationLevel:
    """Smallest L in {1, 2, 4, ...} with log E exp(m |W - W^L|) certified <= 1/m.

    Certification requires estimate + 2 * stderr <= 1/m, the estimate being a
    Monte Carlo mean over ``sample_budget`` i.i.d. alpha tuples.
    """
    if m < 1:
        raise ValueError("m must be a positive integer")
    if sample_budget < 10_000:
        raise ValueError("sample_budget must be at least 1e4")
    if space is None and isinstance(alpha, (DiscreteMeasure, ReferenceMeasure)):
        space = alpha.space
    pts = _draw_tuples(alpha, W.order, sample_budget, seed)
    w = np.abs(W.values(space, *pts))
    history = []
    for e in range(max_exponent + 1):
        L = float(2 ** e)
        excess = np.maximum(w - L, 0.0)
        est, se = log_mean_exp_jackknife(m * excess)
        history.append((L, est, se))
        if est + 2 * se <= 1.0 / m:
            with np.errstate(over="ignore"):
                tail = _heavy_tail(np.expm1(m * excess))
            return TruncationLevel(L, m, est, se, tail, seed, history)
    raise BudgetExhausted(f"no truncation level up to 2^{max_exponent} satisfies the bound for m={m}")
