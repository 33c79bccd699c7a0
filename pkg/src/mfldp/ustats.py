"""U-statistics over ordered tuples of distinct indices, incremental updates,
decoupled sums and exact log-moment-generating-function computations.

Sums always run over I_n^k, the ordered k-tuples of pairwise distinct
indices, so |I_n^k| = n!/(n-k)!. On finite spaces the sum depends on the
configuration only through its occupation counts, which is what makes the
exact enumerations below cheap per configuration.
"""
from __future__ import annotations

import math
from itertools import permutations

import numpy as np
from scipy.special import logsumexp

from .errors import (CacheInvalidated, IndexOutOfRange, NumericalFailure,
                     ReplicaLengthMismatch, TooFewParticles, TooLargeToEnumerate)
from .potentials import InteractionPotential, check_exp_integrability
from .spaces import DiscreteMeasure, ReferenceMeasure

ENUMERATION_LIMIT = 10 ** 7
_BATCH = 1 << 16


def index_count(n: int, k: int) -> int:
    """|I_n^k| = n (n-1) ... (n-k+1)."""
    return math.perm(n, k)


def decoupling_constant(k: int) -> int:
    """C_2 = 8 and C_k = 2^k prod_{j=2}^k (j^j - 1) for k > 2."""
    if k < 2:
        raise ValueError("decoupling constant defined for k >= 2")
    if k == 2:
        return 8
    return 2 ** k * math.prod(j ** j - 1 for j in range(2, k + 1))


# -- finite-space helpers -----------------------------------------------

def _falling(c, m):
    out = np.ones_like(c, dtype=float)
    for r in range(m):
        out = out * (c - r)
    return out


def pattern_multiplicities(counts, k: int) -> np.ndarray:
    """Number of ordered distinct-index k-tuples hitting each state pattern.

    ``counts`` has shape (..., S); the result has shape (..., S**k) with the
    patterns in C order over S^k.
    """
    counts = np.asarray(counts, dtype=float)
    S = counts.shape[-1]
    idx = np.indices((S,) * k).reshape(k, -1)
    mult = np.ones(counts.shape[:-1] + (idx.shape[1],))
    for s in range(S):
        m_s = (idx == s).sum(axis=0)
        for m in np.unique(m_s):
            if m == 0:
                continue
            sel = m_s == m
            mult[..., sel] *= _falling(counts[..., s:s + 1], int(m))
    return mult


def _masked_dot(mult, table_flat):
    with np.errstate(invalid="ignore"):
        return np.where(mult > 0, mult * table_flat, 0.0).sum(axis=-1)


def finite_tuple_sums(table, counts) -> np.ndarray:
    """Tuple sums for (a batch of) occupation count vectors."""
    table = np.asarray(table, dtype=float)
    return _masked_dot(pattern_multiplicities(counts, table.ndim), table.ravel())


# -- direct sums --------------------------------------------------------

def _others(x, i):
    return np.delete(x, i, axis=0)


def _partial_sum(W: InteractionPotential, space, others, p) -> float:
    """Sum of W(p, y_1..y_{k-1}) over ordered tuples of distinct ``others``."""
    k = W.order
    m = len(others)
    if m < k - 1:
        return 0.0
    if k == 2:
        return float(np.sum(W.values(space, p, others)))
    if k == 3:
        a = others[:, None] if space.kind == "finite" else others[:, None, :]
        b = others[None, :] if space.kind == "finite" else others[None, :, :]
        vals = W.values(space, p, a, b)
        vals = np.where(np.eye(m, dtype=bool), 0.0, vals)
        return float(vals.sum())
    total = 0.0
    for tup in permutations(range(m), k - 1):
        total += float(W.values(space, p, *[others[j] for j in tup]))
    return total


def tuple_sum(W: InteractionPotential, space, x) -> float:
    """Sum of W over all ordered k-tuples of distinct indices of ``x``."""
    x = space.validate_points(x)
    n, k = len(x), W.order
    if n < k:
        raise TooFewParticles(f"need n >= {k}, got {n}")
    if space.kind == "finite" and space.size ** k <= 10 ** 6:
        counts = np.bincount(x, minlength=space.size)
        return float(finite_tuple_sums(W.tabulate(space), counts))
    if k == 2:
        total = 0.0
        step = max(1, 4_000_000 // n)
        for lo in range(0, n, step):
            hi = min(n, lo + step)
            a = x[lo:hi, None] if space.kind == "finite" else x[lo:hi, None, :]
            b = x[None, :] if space.kind == "finite" else x[None, :, :]
            vals = W.values(space, a, b)
            rows = np.arange(lo, hi)
            vals[rows - lo, rows] = 0.0
            total += float(vals.sum())
        return total
    return float(sum(_partial_sum(W, space, _others(x, i), x[i]) for i in range(n)))


def u_statistic(W: InteractionPotential, space, x) -> float:
    """U_n(W) = |I_n^k|^{-1} sum over I_n^k of W(x_{i_1}, ..., x_{i_k})."""
    x = space.validate_points(x)
    return tuple_sum(W, space, x) / index_count(len(x), W.order)


def u_statistic_bruteforce(W: InteractionPotential, space, x) -> float:
    """Literal enumeration of I_n^k; only for small n."""
    x = space.validate_points(x)
    n, k = len(x), W.order
    if n < k:
        raise TooFewParticles(f"need n >= {k}, got {n}")
    total = 0.0
    for tup in permutations(range(n), k):
        total += float(W.values(space, *[x[i] for i in tup]))
    return total / index_count(n, k)


def decoupled_u_sum(W: InteractionPotential, space, replicas) -> float:
    """Sum over I_n^k of W(x^1_{i_1}, ..., x^k_{i_k}), coordinate j from replica j."""
    k = W.order
    if len(replicas) != k:
        raise ReplicaLengthMismatch(f"need {k} replicas, got {len(replicas)}")
    reps = [space.validate_points(r) for r in replicas]
    n = len(reps[0])
    if any(len(r) != n for r in reps):
        raise ReplicaLengthMismatch("replicas must have equal length")
    if n < k:
        raise TooFewParticles(f"need n >= {k}, got {n}")
    if n ** k <= ENUMERATION_LIMIT:
        grids = []
        for j, r in enumerate(reps):
            shape = [1] * k
            shape[j] = n
            grids.append(r.reshape(shape + list(r.shape[1:])))
        vals = W.values(space, *grids)
        idx = np.indices((n,) * k)
        distinct = np.ones((n,) * k, dtype=bool)
        for a in range(k):
            for b in range(a + 1, k):
                distinct &= idx[a] != idx[b]
        return float(np.where(distinct, vals, 0.0).sum())
    return float(sum(W.values(space, *[reps[j][t] for j, t in enumerate(tup)])
                     for tup in permutations(range(n), k)))


# -- incremental cache ---------------------------------------------------

class UStatCache:
    """Running tuple sums for a set of potentials bound to one configuration.

    Single-owner mutable state. ``totals[q]`` is the ordered tuple sum of
    ``potentials[q]``; a +inf total marks the configuration as infinite.
    """

    def __init__(self, space, potentials, x):
        self.space = space
        self.potentials = list(potentials)
        self.x = np.array(space.validate_points(x), copy=True)
        self.n = len(self.x)
        for W in self.potentials:
            if self.n < W.order:
                raise TooFewParticles(f"need n >= {W.order}, got {self.n}")
        self.counts_I = np.array([index_count(self.n, W.order) for W in self.potentials],
                                 dtype=float)
        self._finite = space.kind == "finite"
        if self._finite:
            self._tables = [W.tabulate(space) for W in self.potentials]
            self.counts = np.bincount(self.x, minlength=space.size).astype(float)
        self.recompute()

    @property
    def has_infinite(self) -> bool:
        return bool(np.any(np.isinf(self.totals)))

    def recompute(self):
        self.totals = np.array([tuple_sum(W, self.space, self.x) for W in self.potentials])
        if self._finite:
            self.counts = np.bincount(self.x, minlength=self.space.size).astype(float)

    def u_values(self) -> np.ndarray:
        return self.totals / self.counts_I

    def partial(self, q: int, i: int, p) -> float:
        """Sum of W_q over ordered tuples containing index i in first position at value p."""
        W = self.potentials[q]
        if self._finite:
            c = self.counts.copy()
            c[self.x[i]] -= 1
            T = self._tables[q][p]
            if W.order == 2:
                return float(_masked_dot(c, T))
            mult = pattern_multiplicities(c, W.order - 1)
            return float(_masked_dot(mult, T.ravel()))
        return _partial_sum(W, self.space, _others(self.x, i), self.x[i] if p is None else p)

    def _check_index(self, i):
        if not 0 <= i < self.n:
            raise IndexOutOfRange(f"index {i} outside 0..{self.n - 1}")

    def proposed_totals(self, i: int, p) -> np.ndarray:
        """Totals after moving particle i to p, without committing.

        Raises CacheInvalidated when the current total is infinite because
        of a tuple involving particle i; use :meth:`update` with recompute.
        """
        self._check_index(i)
        old = self.x[i]
        new_totals = np.empty_like(self.totals)
        for q, W in enumerate(self.potentials):
            k = W.order
            po = self.partial(q, i, old)
            pn = self.partial(q, i, p)
            if np.isinf(self.totals[q]):
                if np.isinf(po):
                    raise CacheInvalidated("infinite total involving the moved particle")
                new_totals[q] = np.inf
            else:
                new_totals[q] = self.totals[q] + k * (pn - po)
        return new_totals

    def commit(self, i: int, p, totals):
        if self._finite:
            self.counts[self.x[i]] -= 1
            self.counts[p] += 1
        self.x[i] = p
        self.totals = np.asarray(totals, dtype=float)

    def update(self, i: int, p, allow_recompute: bool = True) -> np.ndarray:
        try:
            totals = self.proposed_totals(i, p)
        except CacheInvalidated:
            if not allow_recompute:
                raise
            self.x[i] = p
            self.recompute()
            return self.u_values()
        self.commit(i, p, totals)
        return self.u_values()


def u_statistic_update(cache: UStatCache, i: int, x_new, allow_recompute: bool = True):
    """Move particle i to ``x_new``; returns the cache and the new U_n values."""
    values = cache.update(i, x_new, allow_recompute)
    return cache, values


# -- exact enumeration ---------------------------------------------------

def _finite_alpha(alpha):
    if isinstance(alpha, ReferenceMeasure):
        alpha = alpha.alpha
    if isinstance(alpha, DiscreteMeasure):
        if alpha.space.kind != "finite":
            raise TypeError("exact enumeration needs a finite-space measure")
        return alpha.dense()
    return np.asarray(alpha, dtype=float)


def enumerate_configurations(S: int, length: int, batch: int = _BATCH):
    """Yield all configurations in S^length as integer arrays, in batches."""
    total = S ** length
    if total > ENUMERATION_LIMIT:
        raise TooLargeToEnumerate(f"{S}^{length} = {total} configurations")
    powers = S ** np.arange(length - 1, -1, -1)
    for lo in range(0, total, batch):
        codes = np.arange(lo, min(total, lo + batch))
        yield (codes[:, None] // powers[None, :]) % S


def _log_weights(configs, log_laws):
    """Sum over positions of log_laws[position, state]."""
    pos = np.arange(configs.shape[1])
    return log_laws[pos[None, :], configs].sum(axis=1)


def log_mgf_exact(W: InteractionPotential, alpha, n: int, lam: float, space=None) -> float:
    """(1/n) log E exp(lam n U_n(W)) under alpha^{(x)n}, by full enumeration."""
    a = _finite_alpha(alpha)
    if space is None:
        space = alpha.space
    k = W.order
    if n < k:
        raise TooFewParticles(f"need n >= {k}, got {n}")
    S = len(a)
    T = W.tabulate(space)
    with np.errstate(divide="ignore"):
        la = np.log(a)
    log_laws = np.broadcast_to(la, (n, S))
    acc = -np.inf
    nI = index_count(n, k)
    for cfg in enumerate_configurations(S, n):
        counts = np.stack([(cfg == s).sum(axis=1) for s in range(S)], axis=1)
        U = finite_tuple_sums(T, counts) / nI
        lw = _log_weights(cfg, log_laws)
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isneginf(lw), -np.inf, lw + lam * n * U)
        acc = np.logaddexp(acc, logsumexp(terms))
    return float(acc) / n


def log_mgf_keybound(W: InteractionPotential, alpha, lam: float, space=None,
                     sample_budget: int = 200_000, seed: int = 0) -> float:
    """(1/k) log E exp(k C_k lam |W(X_1..X_k)|), X_i i.i.d. alpha.

    Exact on finite spaces; Monte Carlo otherwise (raises NumericalFailure
    when the estimate is flagged unstable).
    """
    k = W.order
    scale = k * decoupling_constant(k) * lam
    finite = isinstance(alpha, (DiscreteMeasure, ReferenceMeasure)) and alpha.space.kind == "finite"
    if finite or (space is not None and space.kind == "finite"):
        a = _finite_alpha(alpha)
        space = space or alpha.space
        T = np.abs(W.tabulate(space))
        with np.errstate(divide="ignore"):
            la = np.log(a)
        logw = sum(la.reshape([-1 if j == i else 1 for j in range(k)]) for i in range(k))
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isneginf(logw), -np.inf, logw + scale * T)
        return float(logsumexp(terms)) / k
    res = check_exp_integrability(_Abs(W), alpha, scale, sample_budget, seed, space)
    if res.unstable:
        raise NumericalFailure("Monte Carlo estimate of the key bound is unstable")
    return res.log_estimate / k


class _Abs(InteractionPotential):
    def __init__(self, base):
        self.base = base
        self.order = base.order

    def _kernel(self, space, *pts):
        return np.abs(self.base.values(space, *pts))


def _tuples(n, k):
    return list(permutations(range(n), k))


def iterated_log_mgf_bound(phi, laws, n: int, k: int) -> float:
    """Right side of the iterated Jensen/Hoelder inequality.

    ((n-k+1)!/n!) sum_{I in I_n^k} log E exp(phi_I(X^1_{i_1},..,X^k_{i_k}) / (n-k+1)).

    ``phi`` has shape (n,)*k + (S,)*k (entries off I_n^k ignored) or (S,)*k
    for a tuple-independent kernel. ``laws`` has shape (k, n, S) or (k, S):
    the law of X_i^j.
    """
    phi, laws = _prep_phi_laws(phi, laws, n, k)
    coef = math.factorial(n - k + 1) / math.factorial(n)
    total = 0.0
    for I in _tuples(n, k):
        table = phi[I]
        logw = 0.0
        for j, i in enumerate(I):
            with np.errstate(divide="ignore"):
                lj = np.log(laws[j, i])
            logw = np.add.outer(logw, lj) if j else lj
        with np.errstate(invalid="ignore"):
            terms = np.where(np.isneginf(logw), -np.inf, logw + table / (n - k + 1))
        total += float(logsumexp(terms))
    return coef * total


def iterated_log_mgf_lhs(phi, laws, n: int, k: int) -> float:
    """log E exp(((n-k)!/n!) sum_I phi_I(X^1_{i_1}, .., X^k_{i_k})), by enumeration."""
    phi, laws = _prep_phi_laws(phi, laws, n, k)
    S = laws.shape[-1]
    coef = 1.0 / index_count(n, k)
    with np.errstate(divide="ignore"):
        log_laws = np.log(laws.reshape(k * n, S))
    tuples = _tuples(n, k)
    acc = -np.inf
    for cfg in enumerate_configurations(S, k * n):
        X = cfg.reshape(-1, k, n)
        s = np.zeros(len(cfg))
        for I in tuples:
            s += phi[I][tuple(X[:, j, i] for j, i in enumerate(I))]
        lw = _log_weights(cfg, log_laws)
        terms = np.where(np.isneginf(lw), -np.inf, lw + coef * s)
        acc = np.logaddexp(acc, logsumexp(terms))
    return float(acc)


def _prep_phi_laws(phi, laws, n, k):
    phi = np.asarray(phi, dtype=float)
    laws = np.asarray(laws, dtype=float)
    if laws.ndim == 2:
        laws = np.broadcast_to(laws[:, None, :], (k, n, laws.shape[-1]))
    if laws.shape[:2] != (k, n):
        raise ValueError("laws must have shape (k, n, S) or (k, S)")
    S = laws.shape[-1]
    if phi.shape == (S,) * k:
        phi = np.broadcast_to(phi, (n,) * k + (S,) * k)
    if phi.shape != (n,) * k + (S,) * k:
        raise ValueError("phi must have shape (n,)*k + (S,)*k or (S,)*k")
    return phi, laws


def decoupling_sides(phi, alpha, n: int, psi: str = "exp", lam: float = 1.0):
    """Both sides of the decoupling inequality for a symmetric table ``phi``.

    Returns (lhs, rhs) of E psi(|sum_I phi(X_I)|) <= E psi(C_k |sum_I phi(X^1..X^k)|).
    For ``psi="exp"`` (psi(t) = exp(lam t)) the values are logarithms of the
    two expectations; for ``psi="square"`` they are the expectations.
    """
    phi = np.asarray(phi, dtype=float)
    k = phi.ndim
    a = _finite_alpha(alpha)
    S = len(a)
    Ck = decoupling_constant(k)
    tuples = _tuples(n, k)
    with np.errstate(divide="ignore"):
        la = np.log(a)

    def side(length, gather, scale):
        log_laws = np.broadcast_to(la, (length, S))
        if psi == "exp":
            acc = -np.inf
        else:
            acc = 0.0
        for cfg in enumerate_configurations(S, length):
            s = np.zeros(len(cfg))
            for I in tuples:
                s += phi[gather(cfg, I)]
            lw = _log_weights(cfg, log_laws)
            if psi == "exp":
                terms = np.where(np.isneginf(lw), -np.inf, lw + lam * scale * np.abs(s))
                acc = np.logaddexp(acc, logsumexp(terms))
            elif psi == "square":
                acc += float(np.sum(np.exp(lw) * (scale * s) ** 2))
            else:
                raise ValueError(f"unknown psi {psi!r}")
        return float(acc)

    lhs = side(n, lambda cfg, I: tuple(cfg[:, i] for i in I), 1.0)
    rhs = side(k * n, lambda cfg, I: tuple(cfg[:, j * n + i] for j, i in enumerate(I)), Ck)
    return lhs, rhs
