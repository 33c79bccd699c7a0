"""State spaces, discrete probability measures and relative entropy.

Points of a :class:`FiniteSpace` are integer indices into its label list;
points of a :class:`EuclideanSpace` are float arrays whose last axis has
length ``dim``. Measure-level computations on euclidean spaces go through
the cell-centre grid of the configured box.
"""
from __future__ import annotations

from dataclasses import dataclass
from numbers import Number
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, rel_entr

from .errors import EmptyConfiguration, NormalizationDiverged, SpaceMismatch

WEIGHT_TOL = 1e-12


class FiniteSpace:
    """Finite metric space given by labels and a distance table.

    If ``rho`` is omitted the labels must be numbers and ``|a - b|`` is used.
    """

    kind = "finite"

    def __init__(self, labels: Sequence, rho=None, check: bool = True):
        self.labels = tuple(labels)
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("labels must be distinct")
        numeric = all(isinstance(lab, Number) for lab in self.labels)
        self.coords = (np.asarray(self.labels, dtype=float).reshape(-1, 1)
                       if numeric else None)
        if rho is None:
            if self.coords is None:
                raise ValueError("rho is required for non-numeric labels")
            rho = np.abs(self.coords - self.coords.T)
        rho = np.array(rho, dtype=float)
        self.rho = rho
        self.rho.setflags(write=False)
        if check:
            self._check_metric()
        self._index = {lab: i for i, lab in enumerate(self.labels)}

    def _check_metric(self):
        rho, s = self.rho, len(self.labels)
        if rho.shape != (s, s):
            raise ValueError(f"distance table must be {s}x{s}")
        if np.any(rho < 0) or np.any(np.diag(rho) != 0):
            raise ValueError("distances must be nonnegative with zero diagonal")
        if not np.array_equal(rho, rho.T):
            raise ValueError("distance table must be symmetric")
        # rho[i,k] <= rho[i,j] + rho[j,k] for all triples
        viol = rho[:, None, :] - (rho[:, :, None] + rho[None, :, :])
        if np.any(viol > 1e-12 * max(1.0, rho.max(initial=0.0))):
            raise ValueError("distance table violates the triangle inequality")

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return 1

    @property
    def base_point(self) -> int:
        return 0

    def points(self) -> np.ndarray:
        return np.arange(self.size)

    def index(self, label) -> int:
        return self._index[label]

    def distance(self, a, b):
        return self.rho[np.asarray(a), np.asarray(b)]

    def coordinates(self, p) -> np.ndarray:
        if self.coords is None:
            raise TypeError("space has non-numeric labels; no coordinates")
        return self.coords[np.asarray(p)]

    def validate_points(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.dtype.kind not in "iu":
            raise TypeError("finite-space points are integer indices")
        if x.size and (x.min() < 0 or x.max() >= self.size):
            raise ValueError("point index outside the space")
        return x.astype(np.intp, copy=False)

    def to_json(self) -> dict:
        return {"kind": "finite", "labels": list(self.labels),
                "rho": self.rho.tolist()}

    def __eq__(self, other):
        return (isinstance(other, FiniteSpace) and self.labels == other.labels
                and np.array_equal(self.rho, other.rho))

    def __hash__(self):
        return hash(("finite", self.labels))

    def __repr__(self):
        return f"FiniteSpace(labels={list(self.labels)!r})"


class EuclideanSpace:
    """R^d with the euclidean norm, plus a box grid for measure-level work."""

    kind = "euclidean"

    def __init__(self, dim: int = 1, box=(-8.0, 8.0), cells: int = 1001):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        lo, hi = float(box[0]), float(box[1])
        if not hi > lo:
            raise ValueError("box must satisfy lo < hi")
        if cells < 2:
            raise ValueError("need at least 2 cells")
        self.dim = int(dim)
        self.box = (lo, hi)
        self.cells = int(cells)

    @property
    def width(self) -> float:
        return (self.box[1] - self.box[0]) / self.cells

    @property
    def cell_volume(self) -> float:
        return self.width ** self.dim

    @property
    def base_point(self) -> np.ndarray:
        return np.zeros(self.dim)

    def centers(self) -> np.ndarray:
        lo = self.box[0]
        return lo + self.width * (np.arange(self.cells) + 0.5)

    def grid_points(self) -> np.ndarray:
        """All cell centres as an array of shape (cells**dim, dim)."""
        c = self.centers()
        mesh = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def refined(self, cells: int) -> "EuclideanSpace":
        return EuclideanSpace(self.dim, self.box, cells)

    def distance(self, a, b):
        return np.linalg.norm(np.asarray(a, float) - np.asarray(b, float), axis=-1)

    def coordinates(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float)

    def validate_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and self.dim == 1:
            x = x[:, None]
        if x.shape[-1] != self.dim:
            raise ValueError(f"points must have trailing dimension {self.dim}")
        return x

    def to_json(self) -> dict:
        return {"kind": "euclidean", "dim": self.dim, "box": list(self.box),
                "cells": self.cells}

    def __eq__(self, other):
        return (isinstance(other, EuclideanSpace) and self.dim == other.dim
                and self.box == other.box and self.cells == other.cells)

    def __hash__(self):
        return hash(("euclidean", self.dim, self.box, self.cells))

    def __repr__(self):
        return f"EuclideanSpace(dim={self.dim}, box={self.box}, cells={self.cells})"


StateSpace = FiniteSpace | EuclideanSpace


def space_from_json(obj: dict) -> StateSpace:
    kind = obj.get("kind")
    if kind == "finite":
        return FiniteSpace(obj["labels"], obj.get("rho"))
    if kind == "euclidean":
        return EuclideanSpace(obj.get("dim", 1), tuple(obj.get("box", (-8.0, 8.0))),
                              obj.get("cells", 1001))
    raise ValueError(f"unknown space kind {kind!r}")


class DiscreteMeasure:
    """Probability measure with finitely many atoms.

    Duplicate support points are merged (weights added) so that two measures
    with the same atoms compare equal. Zero-weight atoms are kept.
    """

    def __init__(self, space: StateSpace, support, weights, normalize: bool = False):
        self.space = space
        w = np.asarray(weights, dtype=float).ravel()
        support = space.validate_points(support)
        if space.kind == "finite":
            support = support.ravel()
        if len(support) != len(w):
            raise ValueError("support and weights differ in length")
        if len(w) == 0:
            raise ValueError("empty measure")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if normalize:
            if total <= 0:
                raise ValueError("weights sum to zero")
        elif abs(total - 1.0) > WEIGHT_TOL * max(1, np.sqrt(len(w))):
            raise ValueError(f"weights sum to {total!r}, not 1")
        w = w / total
        if space.kind == "finite":
            uniq, inv = np.unique(support, return_inverse=True)
        else:
            uniq, inv = np.unique(support, axis=0, return_inverse=True)
        w = np.bincount(inv.ravel(), weights=w, minlength=len(uniq))
        support = uniq
        self.support = support
        self.weights = w
        self.support.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.weights)

    def dense(self) -> np.ndarray:
        """Weights indexed by finite-space point (finite spaces only)."""
        if self.space.kind != "finite":
            raise TypeError("dense() requires a finite space")
        out = np.zeros(self.space.size)
        out[self.support] = self.weights
        return out

    def coordinates(self) -> np.ndarray:
        return self.space.coordinates(self.support)

    def mean(self) -> np.ndarray:
        return self.weights @ self.coordinates()

    def sample(self, rng: np.random.Generator, size, jitter: bool = False):
        """Draw i.i.d. points; ``jitter`` spreads grid atoms uniformly over their cell."""
        idx = rng.choice(len(self.weights), size=size, p=self.weights)
        pts = self.support[idx]
        if jitter and self.space.kind == "euclidean":
            h = self.space.width
            pts = pts + rng.uniform(-h / 2, h / 2, size=pts.shape)
        return pts

    def to_json(self) -> dict:
        if self.space.kind == "finite":
            sup = [self.space.labels[i] for i in self.support]
        else:
            sup = self.support.tolist()
        return {"support": sup, "weights": self.weights.tolist()}

    def __eq__(self, other):
        return (isinstance(other, DiscreteMeasure) and self.space == other.space
                and np.array_equal(self.support, other.support)
                and np.array_equal(self.weights, other.weights))

    def __repr__(self):
        return f"DiscreteMeasure({len(self)} atoms on {self.space!r})"


def measure_from_json(space: StateSpace, obj: dict) -> DiscreteMeasure:
    sup = obj["support"]
    if space.kind == "finite":
        sup = [space.index(lab) for lab in sup]
    return DiscreteMeasure(space, np.asarray(sup), obj["weights"])


class EmpiricalMeasure(DiscreteMeasure):
    """L_n = (1/n) sum of Dirac masses at the configuration points."""

    def __init__(self, space: StateSpace, points):
        pts = space.validate_points(points)
        n = len(pts)
        if n == 0:
            raise EmptyConfiguration("empirical measure of an empty configuration")
        super().__init__(space, pts, np.full(n, 1.0 / n))
        self.points = pts
        self.n = n


def empirical_measure(space: StateSpace, x) -> EmpiricalMeasure:
    return EmpiricalMeasure(space, x)


def _check_same_space(*measures):
    sp = measures[0].space
    for m in measures[1:]:
        if m.space != sp:
            raise SpaceMismatch(f"{m.space!r} != {sp!r}")


def aligned_weights(nu: DiscreteMeasure, mu: DiscreteMeasure):
    """Weights of ``nu`` and ``mu`` on the union of their supports."""
    _check_same_space(nu, mu)
    if nu.space.kind == "finite":
        return nu.dense(), mu.dense()
    allpts = np.concatenate([nu.support, mu.support])
    uniq, inv = np.unique(allpts, axis=0, return_inverse=True)
    inv = inv.ravel()
    a = np.bincount(inv[:len(nu)], weights=nu.weights, minlength=len(uniq))
    b = np.bincount(inv[len(nu):], weights=mu.weights, minlength=len(uniq))
    return a, b


def relative_entropy(nu: DiscreteMeasure, mu: DiscreteMeasure) -> float:
    """Kullback-Leibler divergence H(nu|mu); +inf unless nu << mu."""
    a, b = aligned_weights(nu, mu)
    return float(np.sum(rel_entr(a, b)))


def product_weights(nu: DiscreteMeasure, k: int) -> np.ndarray:
    """Atom weights of nu^{(x)k}, flattened in C order over support indices."""
    w = nu.weights
    out = w
    for _ in range(k - 1):
        out = np.multiply.outer(out, w).ravel()
    return out


@dataclass(frozen=True)
class ReferenceMeasure:
    """alpha = exp(-V) m / C on a finite space or on a euclidean grid."""

    space: StateSpace
    support: np.ndarray
    base_weights: np.ndarray
    V: np.ndarray
    log_C: float
    alpha: DiscreteMeasure

    @property
    def C(self) -> float:
        return float(np.exp(self.log_C))

    @property
    def C_ref(self) -> float:
        """Normalizer of alpha; distinct from the critical-map normalizer C_crit."""
        return self.C

    @property
    def log_alpha(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.base_weights) - self.V - self.log_C


def build_reference(m, V, space: StateSpace | None = None, support=None) -> ReferenceMeasure:
    """Normalize exp(-V) m into the reference probability measure.

    Without ``space`` a finite space labelled 0..len(m)-1 (discrete metric)
    is created. On euclidean spaces the support defaults to the grid centres.
    """
    m = np.asarray(m, dtype=float).ravel()
    V = np.asarray(V, dtype=float).ravel()
    if m.shape != V.shape:
        raise ValueError("m and V must have the same length")
    if np.any(m < 0) or not np.any(m > 0):
        raise ValueError("base weights must be nonnegative and not all zero")
    if np.any(np.isnan(V)) or np.any(V == -np.inf):
        raise ValueError("V must take values in (-inf, +inf]")
    if space is None:
        s = len(m)
        space = FiniteSpace(list(range(s)), rho=1.0 - np.eye(s))
    if support is None:
        support = space.points() if space.kind == "finite" else space.grid_points()
    support = space.validate_points(support)
    if len(support) != len(m):
        raise ValueError("support does not match the number of weights")
    with np.errstate(divide="ignore"):
        logw = np.log(m) - V
    log_C = float(logsumexp(logw))
    if not np.isfinite(log_C) or log_C > 709:
        raise NormalizationDiverged(f"log normalizer is {log_C}")
    w = np.exp(logw - log_C)
    alpha = DiscreteMeasure(space, support, w, normalize=True)
    for arr in (m, V):
        arr.setflags(write=False)
    return ReferenceMeasure(space, support, m, V, log_C, alpha)


def grid_reference(space: EuclideanSpace, V) -> ReferenceMeasure:
    """Reference measure on the cell grid; ``V`` is a callable of (N, d) points."""
    pts = space.grid_points()
    v = np.asarray(V(pts), dtype=float).ravel()
    m = np.full(len(pts), space.cell_volume)
    return build_reference(m, v, space, pts)


def finite_reference(space: FiniteSpace, weights) -> ReferenceMeasure:
    """Reference measure from explicit alpha weights (counting base measure)."""
    w = np.asarray(weights, dtype=float)
    with np.errstate(divide="ignore"):
        V = -np.log(w)
    return build_reference(np.ones(space.size), V, space)
