"""
Exact optimal transport between atomic measures.

Plans are computed with the network simplex of POT (`ot.emd`) on the atom
bipartite graph. On the real line with the default metric the quantile
(monotone) coupling is used instead: it is optimal for every convex cost and
for the bottleneck cost, and it is exact.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import ot
from scipy.spatial.distance import cdist

from atomics.errors import DimensionMismatch, InvalidParameter, InvalidProfile, SolverFailure
from atomics.measures import AtomicMeasure
from utils.constants import EPS_GRID_LOW, EPS_GRID_SIZE, PLAN_TOLERANCE
from utils.metrics import instrumented

logger = logging.getLogger(__name__)

Metric = Callable[[np.ndarray, np.ndarray], np.ndarray]

# pieces of a 1-d quantile coupling lighter than this are rounding artefacts
_NEGLIGIBLE_MASS = 1e-15


@dataclass(frozen=True)
class TransportPlan:
    rows: np.ndarray
    cols: np.ndarray
    flow: np.ndarray

    def support(self, tol: float = 0.0):
        """(row, col, mass) triples carrying more than `tol` mass."""
        i, j = np.nonzero(self.flow > tol)
        return [(int(self.rows[a]), int(self.cols[b]), float(self.flow[a, b])) for a, b in zip(i, j)]

    def marginal_error(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(max(np.max(np.abs(self.flow.sum(axis=1) - a)),
                         np.max(np.abs(self.flow.sum(axis=0) - b))))


@dataclass(frozen=True)
class TransportResult:
    distance: float
    plan: TransportPlan
    p: float


@dataclass(frozen=True)
class AtomicDistance:
    distance: float
    wasserstein: float
    sup_term: float
    eps_argmax: float
    eps_grid: np.ndarray
    profile: str


@dataclass(frozen=True)
class AtomicConvergenceReport:
    weight_gaps: list
    distances: list
    converges: bool
    p: float


def _check_dims(mu: AtomicMeasure, nu: AtomicMeasure):
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"cannot transport R^{mu.dim} onto R^{nu.dim}")


def _probabilities(mu: AtomicMeasure) -> np.ndarray:
    # truncated tails are left out; the remaining mass is renormalized
    a = np.asarray(mu.a, dtype=float)
    return a / math.fsum(a) if mu.tail_mass > 0.0 else a


def ground_distances(mu: AtomicMeasure, nu: AtomicMeasure, metric: Metric | None = None) -> np.ndarray:
    if metric is None:
        return cdist(mu.locations, nu.locations)
    return np.asarray(metric(mu.locations, nu.locations), dtype=float)


def _quantile_coupling(mu: AtomicMeasure, nu: AtomicMeasure):
    a, b = _probabilities(mu), _probabilities(nu)
    xs, ys = np.argsort(mu.locations[:, 0], kind="stable"), np.argsort(nu.locations[:, 0], kind="stable")
    ca, cb = np.cumsum(a[xs]), np.cumsum(b[ys])
    ca[-1] = cb[-1] = 1.0
    breaks = np.union1d(ca, cb)
    lower = np.concatenate([[0.0], breaks[:-1]])
    mass = breaks - lower
    mid = 0.5 * (breaks + lower)
    i = xs[np.minimum(np.searchsorted(ca, mid), ca.size - 1)]
    j = ys[np.minimum(np.searchsorted(cb, mid), cb.size - 1)]
    flow = np.zeros((a.size, b.size))
    np.add.at(flow, (i, j), mass)
    return flow, i, j, mass


def _emd(a: np.ndarray, b: np.ndarray, cost: np.ndarray) -> np.ndarray:
    try:
        plan, log = ot.emd(a, b, cost, log=True)
    except Exception as e:
        raise SolverFailure("network simplex failed on the transport problem") from e
    if log.get("warning"):
        logger.warning("ot.emd: %s", log["warning"])
    return plan


def _plan(mu: AtomicMeasure, nu: AtomicMeasure, flow: np.ndarray) -> TransportPlan:
    plan = TransportPlan(np.arange(mu.n_atoms), np.arange(nu.n_atoms), flow)
    err = plan.marginal_error(_probabilities(mu), _probabilities(nu))
    if err > PLAN_TOLERANCE:
        logger.warning("Transport plan marginals off by %.3e", err)
    return plan


@instrumented("wasserstein_p")
def wasserstein_p(mu: AtomicMeasure, nu: AtomicMeasure, p: float = 1.0,
                  metric: Metric | None = None) -> TransportResult:
    """W_p between two atomic measures together with an optimal plan."""
    _check_dims(mu, nu)
    if not (math.isfinite(p) and p >= 1.0):
        raise InvalidParameter(f"exponent p must be finite and >= 1, got {p!r}")

    if metric is None and mu.dim == 1:
        flow, i, j, mass = _quantile_coupling(mu, nu)
        cost = math.fsum(mass * np.abs(mu.locations[i, 0] - nu.locations[j, 0]) ** p)
    else:
        dist = ground_distances(mu, nu, metric)
        cost_matrix = dist ** p
        flow = _emd(_probabilities(mu), _probabilities(nu), cost_matrix)
        cost = math.fsum((flow * cost_matrix).ravel())
    return TransportResult(max(cost, 0.0) ** (1.0 / p), _plan(mu, nu, flow), p)


def bottleneck_feasible(mu: AtomicMeasure, nu: AtomicMeasure, threshold: float,
                        metric: Metric | None = None):
    """
    Whether some coupling only moves mass along edges of length <= threshold.

    Returns (feasible, plan); the plan is optimal for the 0/1 cost that
    charges forbidden edges.
    """
    dist = ground_distances(mu, nu, metric)
    forbidden = (dist > threshold).astype(float)
    flow = _emd(_probabilities(mu), _probabilities(nu), forbidden)
    return math.fsum((flow * forbidden).ravel()) <= PLAN_TOLERANCE, flow


@instrumented("wasserstein_inf")
def wasserstein_inf(mu: AtomicMeasure, nu: AtomicMeasure, metric: Metric | None = None) -> TransportResult:
    """W_∞: the smallest achievable maximal displacement over all couplings."""
    _check_dims(mu, nu)
    if metric is None and mu.dim == 1:
        flow, i, j, mass = _quantile_coupling(mu, nu)
        keep = mass > _NEGLIGIBLE_MASS
        gaps = np.abs(mu.locations[i[keep], 0] - nu.locations[j[keep], 0])
        return TransportResult(float(gaps.max()) if gaps.size else 0.0, _plan(mu, nu, flow), math.inf)

    candidates = np.unique(ground_distances(mu, nu, metric))
    lo, hi = 0, candidates.size - 1
    ok, best = bottleneck_feasible(mu, nu, candidates[hi], metric)
    if not ok:
        raise SolverFailure("no coupling found even with every edge allowed")
    while lo < hi:
        mid = (lo + hi) // 2
        ok, flow = bottleneck_feasible(mu, nu, candidates[mid], metric)
        if ok:
            hi, best = mid, flow
        else:
            lo = mid + 1
    logger.debug("W_inf resolved after bisection over %d candidate lengths", candidates.size)
    return TransportResult(float(candidates[hi]), _plan(mu, nu, best), math.inf)


PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tent": lambda r: np.maximum(0.0, 1.0 - r),
    "exp": lambda r: np.exp(-r),
}


def resolve_profile(psi) -> tuple[str, Callable[[np.ndarray], np.ndarray]]:
    if isinstance(psi, str):
        if psi not in PROFILES:
            raise InvalidProfile(f"unknown profile {psi!r}; expected one of {sorted(PROFILES)}")
        name, fn = psi, PROFILES[psi]
    elif callable(psi):
        name, fn = getattr(psi, "__name__", "custom"), psi
    else:
        raise InvalidProfile(f"profile must be a name or a callable, got {type(psi).__name__}")

    samples = np.asarray(fn(np.linspace(0.0, 10.0, 201)), dtype=float)
    if samples[0] != 1.0:
        raise InvalidProfile(f"profile must satisfy psi(0) = 1, got {samples[0]!r}")
    if np.any(samples < 0.0) or np.any(samples > 1.0) or np.any(np.diff(samples) > 1e-15):
        raise InvalidProfile("profile must be non-increasing with values in [0, 1]")
    return name, fn


def default_eps_grid(size: int = EPS_GRID_SIZE, low: float = EPS_GRID_LOW) -> np.ndarray:
    """`size` log-spaced points in [low, 1)."""
    return np.geomspace(low, 1.0, size + 1)[:-1]


def _self_interaction(mu: AtomicMeasure, fn, eps: float, metric: Metric | None) -> float:
    dist = ground_distances(mu, mu, metric)
    return float(mu.a @ fn(dist / eps) @ mu.a)


@instrumented("atomic_metric")
def atomic_metric(mu: AtomicMeasure, nu: AtomicMeasure, p: float = 1.0, psi="tent",
                  eps_grid=None, metric: Metric | None = None) -> AtomicDistance:
    """
    W_p plus the largest gap of ∫ψ(d(x,y)/ε) d(μ⊗μ - ν⊗ν) over `eps_grid`.

    The supremum over ε ∈ (0, 1) is replaced by a maximum over the finite
    grid, so the returned value is a lower bound of the exact distance.
    """
    name, fn = resolve_profile(psi)
    grid = default_eps_grid() if eps_grid is None else np.asarray(eps_grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise InvalidParameter("eps grid must be a non-empty subset of (0, 1)")

    w = wasserstein_p(mu, nu, p, metric).distance
    gaps = np.array([abs(_self_interaction(mu, fn, e, metric) - _self_interaction(nu, fn, e, metric))
                     for e in grid])
    k = int(np.argmax(gaps))
    return AtomicDistance(w + float(gaps[k]), w, float(gaps[k]), float(grid[k]), grid, name)


def weight_gap(mu: AtomicMeasure, limit: AtomicMeasure) -> float:
    """Σ|a_i - b_i| over sorted weights, the shorter list padded with zeros."""
    n = max(mu.n_atoms, limit.n_atoms)
    a = np.zeros(n)
    b = np.zeros(n)
    a[:mu.n_atoms] = mu.a
    b[:limit.n_atoms] = limit.a
    return math.fsum(np.abs(a - b))


def atomic_convergence_report(seq, limit: AtomicMeasure, p: float = 1.0, tol: float = 1e-2,
                              metric: Metric | None = None) -> AtomicConvergenceReport:
    """
    Weight gaps and W_p distances along `seq`.

    Atomic convergence requires both the weight gaps and the distances to go
    to zero; over a finite sequence this is flagged when the last entries of
    both are below `tol`.
    """
    gaps = [weight_gap(mu, limit) for mu in seq]
    dists = [wasserstein_p(mu, limit, p, metric).distance for mu in seq]
    converges = bool(gaps) and gaps[-1] <= tol and dists[-1] <= tol
    return AtomicConvergenceReport(gaps, dists, converges, p)
