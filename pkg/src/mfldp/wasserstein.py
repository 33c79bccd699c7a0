"""L^p-Wasserstein distances between discrete measures and the exponential
tail condition on the reference measure."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import DimensionMismatch, SpaceMismatch, SupportTooLarge
from .potentials import check_exp_integrability
from .spaces import DiscreteMeasure, ReferenceMeasure

MAX_ATOMS = 2000
BOUNDARY_FRACTION = 0.01
BOUNDARY_SHARE = 0.5


def _ot():
    # keep POT from probing heavyweight array backends at import time
    for name in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
        os.environ.setdefault(f"POT_BACKEND_DISABLE_{name}", "1")
    import ot
    return ot


@dataclass
class TransportPlan:
    """Coupling xi over supp(mu) x supp(nu) and its cost sum xi rho^p."""

    coupling: np.ndarray
    cost: float
    p: float
    source_support: np.ndarray
    target_support: np.ndarray

    def triples(self, tol: float = 0.0):
        """Nonzero entries as (i, j, xi) rows."""
        i, j = np.nonzero(self.coupling > tol)
        return np.column_stack([i, j, self.coupling[i, j]])


def _line_coordinates(mu: DiscreteMeasure) -> np.ndarray:
    sp = mu.space
    if sp.kind == "euclidean":
        if sp.dim != 1:
            raise DimensionMismatch(f"quantile formula needs d=1, got d={sp.dim}")
        return mu.support[:, 0]
    coords = getattr(sp, "coords", None)
    if coords is None or not np.allclose(sp.rho, np.abs(coords - coords.T)):
        raise DimensionMismatch("finite space is not a subset of the line with |a-b|")
    return coords[mu.support, 0]


def _check(mu, nu, p):
    if mu.space != nu.space:
        raise SpaceMismatch(f"{mu.space!r} != {nu.space!r}")
    if not p >= 1:
        raise ValueError("p must be >= 1")


def wasserstein_1d(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0) -> float:
    """W_p on the line through the monotone coupling of quantile functions."""
    _check(mu, nu, p)
    x, y = _line_coordinates(mu), _line_coordinates(nu)
    ox, oy = np.argsort(x, kind="stable"), np.argsort(y, kind="stable")
    x, a = x[ox], mu.weights[ox]
    y, b = y[oy], nu.weights[oy]
    ca, cb = np.cumsum(a), np.cumsum(b)
    ca[-1] = cb[-1] = 1.0
    t = np.union1d(ca, cb)
    t = t[t > 0]
    lo = np.concatenate([[0.0], t[:-1]])
    keep = t > lo
    t, lo = t[keep], lo[keep]
    mid = 0.5 * (lo + t)
    qx = x[np.minimum(np.searchsorted(ca, mid, side="left"), len(x) - 1)]
    qy = y[np.minimum(np.searchsorted(cb, mid, side="left"), len(y) - 1)]
    cost = float(np.sum((t - lo) * np.abs(qx - qy) ** p))
    return cost ** (1.0 / p)


def cost_matrix(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0) -> np.ndarray:
    if mu.space.kind == "finite":
        d = mu.space.rho[np.ix_(mu.support, nu.support)]
    else:
        d = cdist(mu.support, nu.support)
    return d ** p


def wasserstein_exact(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0):
    """Exact W_p by the transportation linear program.

    Equal-size uniform measures use the assignment solver; everything else
    goes through network simplex. Ties between optimal plans are broken by
    the solver's pivot order, so the returned plan is deterministic but not
    canonical.
    """
    _check(mu, nu, p)
    if len(mu) > MAX_ATOMS or len(nu) > MAX_ATOMS:
        raise SupportTooLarge(f"supports of size {len(mu)} and {len(nu)} exceed {MAX_ATOMS}")
    C = cost_matrix(mu, nu, p)
    a, b = mu.weights, nu.weights
    m = len(a)
    if m == len(b) and np.all(a == a[0]) and np.all(b == b[0]):
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros_like(C)
        plan[rows, cols] = 1.0 / m
    else:
        ot = _ot()
        b = b * (a.sum() / b.sum())
        plan = ot.emd(a, b, C, numItermax=10_000_000)
    cost = float(np.sum(plan * C))
    cost = max(cost, 0.0)
    return cost ** (1.0 / p), TransportPlan(plan, cost, p, mu.support, nu.support)


def wasserstein(mu: DiscreteMeasure, nu: DiscreteMeasure, p: float = 1.0) -> float:
    """W_p by the quantile formula when the space is a line, else the LP."""
    try:
        return wasserstein_1d(mu, nu, p)
    except DimensionMismatch:
        return wasserstein_exact(mu, nu, p)[0]


@dataclass
class TailEstimate:
    lam: float
    estimate: float
    log_estimate: float
    stderr: float
    unstable: bool
    method: str

    @property
    def passes(self) -> bool:
        return not self.unstable and np.isfinite(self.estimate)


def _boundary_heavy(space, support, logterms) -> bool:
    # on a truncated grid a divergent integral shows up as mass piling onto the box edge
    lo, hi = space.box
    reach = BOUNDARY_FRACTION * (hi - lo)
    edge = np.any((support < lo + reach) | (support > hi - reach), axis=1)
    if not np.any(edge):
        return False
    # integrand still growing at the edge: the untruncated integral diverges
    if logterms[edge].max() >= logterms[~edge].max():
        return True
    share = math.exp(logsumexp(logterms[edge]) - logsumexp(logterms))
    return share > BOUNDARY_SHARE


def tail_condition_check(alpha, p: float, lams, x0=None, sample_budget: int = 100_000,
                         seed: int = 0, space=None) -> list:
    """Estimates of int exp(lam rho(x, x0)^p) alpha(dx), one per lam.

    Finite spaces are summed exactly. Grid measures are summed exactly over
    the grid and flagged unstable when the box edge carries most of the
    integral or the integrand peaks there. A sampler callable (with ``space``) is estimated by Monte Carlo
    with the heavy-tail flag.
    """
    lams = [float(v) for v in np.atleast_1d(lams)]
    if any(not v > 0 for v in lams):
        raise ValueError("every lambda must be positive")
    if isinstance(alpha, ReferenceMeasure):
        alpha = alpha.alpha
    out = []
    if isinstance(alpha, DiscreteMeasure):
        sp = alpha.space
        x0 = sp.base_point if x0 is None else x0
        r = np.asarray(sp.distance(alpha.support, x0), dtype=float) ** p
        with np.errstate(divide="ignore"):
            logw = np.log(alpha.weights)
        for lam in lams:
            terms = logw + lam * r
            log_est = float(logsumexp(terms))
            est = math.exp(log_est) if log_est < 709 else math.inf
            if sp.kind == "finite":
                out.append(TailEstimate(lam, est, log_est, 0.0, False, "exact"))
            else:
                unstable = _boundary_heavy(sp, alpha.support, terms)
                out.append(TailEstimate(lam, est, log_est, 0.0, unstable, "grid-sum"))
        return out
    if space is None:
        raise ValueError("a sampler callable needs the space")
    x0 = space.base_point if x0 is None else x0

    def moment(x):
        return np.asarray(space.distance(x, x0), dtype=float) ** p

    for lam in lams:
        r = check_exp_integrability((1, moment), alpha, lam, sample_budget, seed, space)
        out.append(TailEstimate(lam, r.estimate, r.log_estimate, r.stderr, r.unstable,
                                "monte-carlo"))
    return out
