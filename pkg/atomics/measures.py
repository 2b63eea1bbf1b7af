"""
Purely atomic probability measures.

An `AtomicMeasure` is the canonical form of a finite formal sum
``sum_i a_i delta_{x_i}``: weights sorted non-increasing, ties broken by the
lexicographic order of the locations, locations pairwise distinct. Infinite
measures are carried truncated, with the residual mass in
`WeightSequence.tail_mass`.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from atomics.errors import (
    DimensionMismatch,
    DuplicateLocation,
    MassNotOne,
    NonPositiveWeight,
    ValidationError,
)
from utils.constants import (
    MASS_EXACT_TOLERANCE,
    MASS_TOLERANCE,
    MERGE_DISTANCE,
    STRICT_WEIGHT_TOLERANCE,
)

logger = logging.getLogger(__name__)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class WeightSequence:
    weights: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise ValidationError("weight sequence must contain at least one weight")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise NonPositiveWeight(f"weights must be finite and > 0, got min {np.min(w)!r}")
        if np.any(np.diff(w) > 0.0):
            raise ValidationError("weights must be sorted non-increasing")
        tail = float(self.tail_mass)
        if not 0.0 <= tail < 1.0:
            raise ValidationError(f"tail_mass must lie in [0, 1), got {tail!r}")
        total = math.fsum(w) + tail
        if abs(total - 1.0) > MASS_EXACT_TOLERANCE:
            raise MassNotOne(f"weights + tail_mass = {total!r}, expected 1")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "tail_mass", tail)

    def __len__(self) -> int:
        return self.weights.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeightSequence):
            return NotImplemented
        return self.tail_mass == other.tail_mass and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.weights.tobytes(), self.tail_mass))

    @classmethod
    def from_values(cls, values: Sequence[float], tail_mass: float = 0.0) -> "WeightSequence":
        """Sort descending and renormalize values whose mass is within `MASS_TOLERANCE` of one."""
        w = np.sort(np.asarray(values, dtype=float).reshape(-1))[::-1]
        return cls(_normalized(w, tail_mass), tail_mass)


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    weights: WeightSequence
    locations: np.ndarray

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float)
        if loc.ndim != 2 or loc.shape[0] != len(self.weights):
            raise DimensionMismatch(
                f"locations of shape {loc.shape} do not match {len(self.weights)} weights"
            )
        object.__setattr__(self, "locations", _frozen(loc))

    @property
    def dim(self) -> int:
        return self.locations.shape[1]

    @property
    def a(self) -> np.ndarray:
        return self.weights.weights

    @property
    def n_atoms(self) -> int:
        return self.locations.shape[0]

    @property
    def tail_mass(self) -> float:
        return self.weights.tail_mass

    def __eq__(self, other) -> bool:
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return self.weights == other.weights and np.array_equal(self.locations, other.locations)

    def __hash__(self):
        return hash((self.weights, self.locations.tobytes()))

    def integrate(self, fn) -> float:
        """∫ fn dμ for a vectorized `fn` mapping (n, d) points to (n,) values."""
        return float(np.dot(self.a, np.asarray(fn(self.locations), dtype=float)))


@dataclass(frozen=True, eq=False)
class MeasureCurve:
    times: np.ndarray
    states: tuple = field(default_factory=tuple)

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        states = tuple(self.states)
        if times.size != len(states):
            raise DimensionMismatch(f"{times.size} times for {len(states)} states")
        if times.size == 0:
            raise ValidationError("a curve needs at least one node")
        if np.any(np.diff(times) <= 0.0):
            raise ValidationError("curve times must be strictly increasing")
        dims = {s.dim for s in states}
        if len(dims) != 1:
            raise DimensionMismatch(f"curve states have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "states", states)

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def __len__(self) -> int:
        return self.times.size

    @property
    def step(self) -> float:
        return float(np.max(np.diff(self.times))) if self.times.size > 1 else 0.0


def as_points(locations, dim: int | None = None) -> np.ndarray:
    """Coerce a list of points (or scalars for d = 1) to a float array of shape (n, d)."""
    pts = np.asarray(locations, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dim in (None, 1) else pts.reshape(1, -1)
    if pts.ndim != 2:
        raise DimensionMismatch(f"points must form a 2-d array, got shape {pts.shape}")
    if dim is not None and pts.shape[1] != dim:
        raise DimensionMismatch(f"points have dimension {pts.shape[1]}, expected {dim}")
    if not np.all(np.isfinite(pts)):
        raise ValidationError("locations must be finite")
    return pts


def _normalized(w: np.ndarray, tail_mass: float) -> np.ndarray:
    if w.size == 0:
        raise ValidationError("at least one weight is required")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise NonPositiveWeight("weights must be finite and strictly positive")
    total = math.fsum(w) + tail_mass
    if abs(total - 1.0) > MASS_TOLERANCE:
        raise MassNotOne(f"total mass {total!r} differs from 1 by more than {MASS_TOLERANCE}")
    if abs(total - 1.0) > MASS_EXACT_TOLERANCE:
        w = w * ((1.0 - tail_mass) / math.fsum(w))
    return w


def _canonical_order(weights: np.ndarray, locations: np.ndarray) -> np.ndarray:
    # lexsort: last key is primary
    keys = tuple(locations[:, k] for k in range(locations.shape[1] - 1, -1, -1)) + (-weights,)
    return np.lexsort(keys)


def _merge_duplicates(weights: np.ndarray, locations: np.ndarray):
    n = locations.shape[0]
    if n < 2:
        return weights, locations
    pairs = cKDTree(locations).query_pairs(r=MERGE_DISTANCE, output_type="ndarray")
    if pairs.size == 0:
        return weights, locations
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    n_comp, labels = connected_components(graph, directed=False)
    # representative: lexicographically smallest member of each component
    lex = np.lexsort(tuple(locations[:, k] for k in range(locations.shape[1] - 1, -1, -1)))
    rep = np.full(n_comp, -1)
    for idx in lex:
        if rep[labels[idx]] < 0:
            rep[labels[idx]] = idx
    merged = np.zeros(n_comp)
    for comp in range(n_comp):
        merged[comp] = math.fsum(weights[labels == comp])
    logger.debug("Merged %d atoms into %d distinct locations", n, n_comp)
    return merged, locations[rep]


def make_atomic(weights, locations, tail_mass: float | None = None) -> AtomicMeasure:
    """
    Canonical atomic measure from raw weights and locations.

    Coincident locations (closer than `MERGE_DISTANCE`) are merged by summing
    their weights. `weights` may be a `WeightSequence`, whose tail is kept.
    """
    if isinstance(weights, WeightSequence):
        if tail_mass is None:
            tail_mass = weights.tail_mass
        weights = weights.weights
    tail = 0.0 if tail_mass is None else float(tail_mass)
    w = np.asarray(weights, dtype=float).reshape(-1)
    loc = as_points(locations)
    if loc.shape[0] != w.size:
        raise DimensionMismatch(f"{w.size} weights for {loc.shape[0]} locations")
    w = _normalized(w, tail)
    w, loc = _merge_duplicates(w, loc)
    order = _canonical_order(w, loc)
    return AtomicMeasure(WeightSequence(w[order], tail), loc[order])


def em(a, x) -> AtomicMeasure:
    """The measure ``sum_i a_i delta_{x_i}`` for pairwise distinct locations `x`."""
    ws = a if isinstance(a, WeightSequence) else WeightSequence.from_values(a)
    loc = as_points(x)
    if loc.shape[0] != len(ws):
        raise DimensionMismatch(f"{len(ws)} weights for {loc.shape[0]} locations")
    if np.unique(loc, axis=0).shape[0] != loc.shape[0]:
        raise DuplicateLocation("em requires pairwise distinct locations")
    order = _canonical_order(ws.weights, loc)
    w = ws.weights[order]
    if not np.array_equal(w, ws.weights):
        ws = WeightSequence(w, ws.tail_mass)
    return AtomicMeasure(ws, loc[order])


def atom_mass(mu: AtomicMeasure, x) -> float:
    """μ[x] = μ({x}); exact coordinate equality."""
    point = np.asarray(x, dtype=float).reshape(-1)
    if point.size != mu.dim:
        raise DimensionMismatch(f"point of dimension {point.size} for a measure on R^{mu.dim}")
    hit = np.all(mu.locations == point, axis=1)
    return float(mu.a[hit].sum()) if hit.any() else 0.0


def mu_star_mass(mu: AtomicMeasure) -> float:
    return math.fsum(mu.a * mu.a)


def total_mass(mu: AtomicMeasure) -> float:
    return math.fsum(mu.a) + mu.tail_mass


def is_strictly_decreasing(weights, tol: float = STRICT_WEIGHT_TOLERANCE) -> bool:
    w = weights.weights if isinstance(weights, WeightSequence) else np.asarray(weights, dtype=float)
    return bool(np.all(w[:-1] - w[1:] > tol))


def absorb_tail(mu: AtomicMeasure, location) -> AtomicMeasure:
    """Assign the truncated tail to one extra atom at `location`."""
    if mu.tail_mass == 0.0:
        return mu
    point = as_points(location, mu.dim)
    w = np.concatenate([mu.a, [mu.tail_mass]])
    return make_atomic(w, np.vstack([mu.locations, point]), tail_mass=0.0)


def dirac(point) -> AtomicMeasure:
    return make_atomic([1.0], np.asarray(point, dtype=float).reshape(1, -1))


def uniform(points) -> AtomicMeasure:
    pts = as_points(points)
    return make_atomic(np.full(pts.shape[0], 1.0 / pts.shape[0]), pts)
