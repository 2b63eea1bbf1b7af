"""
Purely atomic liftings recovered from sampled curves of atomic measures.

A curve admits a lifting with time-constant weights only if its weight
spectrum is constant: `weight_spectrum_audit` groups the atom weights into
classes S_a of common weight a and checks their sizes node by node. The
reconstruction then pairs atoms of each class between consecutive nodes by an
exact min-cost assignment, optionally against an explicit-Euler prediction
from the driving field.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist
from scipy.stats import poisson

from atomics.catalog import Affine, Constant, Indicator
from atomics.cylinder import F_a, FactorizedInner, GenCylinderFn, grad_gc
from atomics.dynamics import Lifting, LiftingEnsemble
from atomics.errors import DegenerateLaw, GridMismatch, InvalidParameter, MatchingInfeasible, SpectrumRejected
from atomics.fields import NonLocalField
from atomics.measures import AtomicMeasure, MeasureCurve
from atomics.sampling import RandomMeasureLaw, mean_and_se, monte_carlo, sample_measure, sample_weights
from atomics.transport import wasserstein_p
from utils.constants import AMBIGUITY_FACTOR, GROUPING_TOLERANCE, MASS_TOLERANCE
from utils.metrics import instrumented

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WeightClass:
    weight: float
    size: int
    # per node, indices of the class atoms in that node's measure
    members: tuple


@dataclass(frozen=True)
class Rejection:
    t_before: float
    t_after: float
    weight: float
    atoms_before: int
    atoms_after: int
    message: str


@dataclass(frozen=True)
class WeightClassDecomposition:
    classes: tuple
    tol: float
    tail_mass: float = 0.0
    rejection: Rejection | None = None

    @property
    def accepted(self) -> bool:
        return self.rejection is None

    @property
    def total_mass(self) -> float:
        return math.fsum(c.weight * c.size for c in self.classes) + self.tail_mass


def _classes(mu: AtomicMeasure, tol: float) -> list[tuple[float, np.ndarray]]:
    """Runs of relatively equal weights in the (non-increasing) weight vector."""
    a = mu.a
    out, start = [], 0
    for i in range(1, a.size + 1):
        if i == a.size or a[start] - a[i] > tol * a[start]:
            out.append((float(a[start]), np.arange(start, i)))
            start = i
    return out


def weight_spectrum_audit(curve: MeasureCurve, tol: float = GROUPING_TOLERANCE) -> WeightClassDecomposition:
    """
    Classes of equal weight that persist across every node of the curve.

    A failed audit is returned as a decomposition carrying a `Rejection` for
    the first offending pair of nodes.
    """
    if not tol > 0.0:
        raise InvalidParameter(f"grouping tolerance must be > 0, got {tol}")
    per_node = [_classes(mu, tol) for mu in curve.states]
    reference = per_node[0]
    for k in range(1, len(per_node)):
        prev, cur = per_node[k - 1], per_node[k]
        before, after = curve.states[k - 1], curve.states[k]
        for j in range(max(len(prev), len(cur))):
            if j >= len(prev) or j >= len(cur):
                w = prev[j][0] if j < len(prev) else cur[j][0]
                msg = f"class count changes from {len(prev)} to {len(cur)}"
            elif abs(prev[j][0] - cur[j][0]) > tol * prev[j][0]:
                w, msg = prev[j][0], f"class weight {prev[j][0]!r} becomes {cur[j][0]!r}"
            elif prev[j][1].size != cur[j][1].size:
                w, msg = prev[j][0], f"class size {prev[j][1].size} becomes {cur[j][1].size}"
            else:
                continue
            rejection = Rejection(float(curve.times[k - 1]), float(curve.times[k]), w,
                                  before.n_atoms, after.n_atoms,
                                  f"{msg} between t={curve.times[k - 1]} and t={curve.times[k]} "
                                  f"({before.n_atoms} vs {after.n_atoms} atoms)")
            logger.info("Weight spectrum rejected: %s", rejection.message)
            return WeightClassDecomposition((), tol, curve.states[0].tail_mass, rejection)

    classes = tuple(
        WeightClass(w, idx.size, tuple(node[j][1] for node in per_node))
        for j, (w, idx) in enumerate(reference)
    )
    decomposition = WeightClassDecomposition(classes, tol, curve.states[0].tail_mass)
    if abs(decomposition.total_mass - 1.0) > MASS_TOLERANCE:
        raise MatchingInfeasible(f"class masses sum to {decomposition.total_mass!r}, expected 1")
    return decomposition


@dataclass(frozen=True)
class Reconstruction:
    lifting: Lifting
    decomposition: WeightClassDecomposition
    total_cost: float
    ambiguous_nodes: tuple = field(default_factory=tuple)


def _ambiguous(points: np.ndarray, displacement: float) -> bool:
    if points.shape[0] < 2:
        return False
    return float(pdist(points).min()) < AMBIGUITY_FACTOR * displacement


@instrumented("reconstruct_lifting")
def reconstruct(curve: MeasureCurve, b: NonLocalField | None = None, p: float = 2.0,
                tol: float = GROUPING_TOLERANCE) -> Reconstruction:
    """
    Per-class min-cost matching between consecutive nodes, cost |x̂ - x|^p with
    x̂ the b-predicted position when b is given, else the previous position.
    """
    if not p >= 1.0:
        raise InvalidParameter(f"matching exponent must be >= 1, got {p}")
    decomposition = weight_spectrum_audit(curve, tol)
    if not decomposition.accepted:
        raise SpectrumRejected(decomposition.rejection.message)

    states, times = curve.states, curve.times
    positions = np.empty((len(curve), states[0].n_atoms, curve.dim))
    positions[0] = states[0].locations
    costs, ambiguous = [], set()
    offsets = np.cumsum([0] + [c.size for c in decomposition.classes])
    for k in range(len(curve) - 1):
        dt = times[k + 1] - times[k]
        for c, start in zip(decomposition.classes, offsets):
            rows = slice(start, start + c.size)
            prev = positions[k, rows]
            pred = prev + dt * np.asarray(b(times[k], prev, states[k]), dtype=float) if b is not None else prev
            nxt = states[k + 1].locations[c.members[k + 1]]
            cost = cdist(pred, nxt) ** p
            i, j = linear_sum_assignment(cost)
            matched = np.empty_like(nxt)
            matched[i] = nxt[j]
            positions[k + 1, rows] = matched
            costs.extend(cost[i, j].tolist())
            step = float(np.linalg.norm(matched - prev, axis=1).max())
            if _ambiguous(matched, step):
                ambiguous.add(k + 1)

    if ambiguous:
        logger.warning("Crossing ambiguity at %d of %d nodes", len(ambiguous), len(curve))
    lifting = Lifting(states[0].weights, times, positions)
    return Reconstruction(lifting, decomposition, math.fsum(costs), tuple(sorted(ambiguous)))


def reconstruct_lifting(curve: MeasureCurve, b: NonLocalField | None = None, p: float = 2.0,
                        tol: float = GROUPING_TOLERANCE) -> Lifting:
    return reconstruct(curve, b, p, tol).lifting


@dataclass(frozen=True)
class VerificationReport:
    marginal_errors: tuple
    ode_residuals: tuple | None

    @property
    def max_marginal_error(self) -> float:
        return max(self.marginal_errors)

    @property
    def max_ode_residual(self) -> float | None:
        return None if self.ode_residuals is None else max(self.ode_residuals)


def verify_lifting(lam: Lifting, curve: MeasureCurve, b: NonLocalField | None = None,
                   p: float = 2.0) -> VerificationReport:
    """Marginal W_p errors per node and, with b, the per-atom discrete ODE residual."""
    if lam.times.shape != curve.times.shape or not np.array_equal(lam.times, curve.times):
        raise GridMismatch("lifting and curve are sampled on different time grids")
    errors = []
    for k, state in enumerate(curve.states):
        mu = lam.marginal(k)
        errors.append(0.0 if mu == state else wasserstein_p(mu, state, p).distance)

    residuals = None
    if b is not None and len(lam) > 1:
        worst = np.zeros(lam.n_atoms)
        for k in range(len(lam) - 1):
            x = lam.positions[k]
            dt = lam.times[k + 1] - lam.times[k]
            drift = (lam.positions[k + 1] - x) / dt - np.asarray(b(lam.times[k], x, curve.states[k]), dtype=float)
            worst = np.maximum(worst, np.linalg.norm(drift, axis=1))
        residuals = tuple(worst.tolist())
    return VerificationReport(tuple(errors), residuals)


# ---- weight-counting functional ----

def poisson_F_a_moments(lam: float, a: float) -> tuple[float, float]:
    """Exact mean and variance of F_a (count form) when the atom count is 1 + Poisson(lam)."""
    n_max = int(math.floor(1.0 / a))
    ns = np.arange(1, n_max + 1)
    pmf = poisson.pmf(ns - 1, lam)
    mean = math.fsum(pmf * ns)
    second = math.fsum(pmf * ns ** 2)
    return mean, second - mean * mean


@dataclass(frozen=True)
class SobolevReport:
    a: float
    mode: str
    constant_along_liftings: bool
    max_lifting_deviation: float
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    gradient_energy: float
    degenerate: bool
    poincare_violated: bool
    n_samples: int


def _indicator_functional(a: float) -> GenCylinderFn:
    return GenCylinderFn((FactorizedInner(Constant(1.0), Indicator(a, 1.0)),), Affine((1.0,)))


@instrumented("sobolev_counterexample")
def sobolev_counterexample(law: RandomMeasureLaw, a: float, ensemble: LiftingEnsemble, n_mc: int, seed: int,
                           mode: str = "count", strict: bool = False, threads: int = 1) -> SobolevReport:
    """
    F_a is constant along every lifting yet has positive variance under Q_{π,ν}
    while its Wasserstein gradient vanishes, so no Poincaré inequality holds.
    """
    deviation = 0.0
    for lam in ensemble.members:
        values = [F_a(lam.marginal(k), a, mode) for k in range(len(lam))]
        deviation = max(deviation, max(values) - min(values))

    F = _indicator_functional(a)

    def block(rng, m):
        out = np.empty((m, 2))
        for k in range(m):
            mu = sample_measure(law, rng)
            grad = grad_gc(F, mu.locations, mu)
            out[k] = (F_a(mu, a, mode), float(mu.a @ np.einsum("ij,ij->i", grad, grad)))
        return out

    draws = monte_carlo(n_mc, seed, "sobolev_counterexample", block, threads)
    values = draws[:, 0]
    mean, mean_se = mean_and_se(values)
    variance = float(values.var(ddof=1))
    centered = values - values.mean()
    variance_se = math.sqrt(max(float(np.mean(centered ** 4)) - variance ** 2, 0.0) / values.size)
    energy = float(draws[:, 1].mean())

    drawn = [sample_weights(law, seed + i).weights for i in range(min(n_mc, 64))]
    degenerate = law.weight_law.is_dirac or all(
        w.shape == drawn[0].shape and np.array_equal(w, drawn[0]) for w in drawn)
    if degenerate:
        logger.warning("Weight law %s is a Dirac mass; no Poincaré violation can be witnessed",
                       law.weight_law.kind)
        if strict:
            raise DegenerateLaw(f"weight law {law.weight_law.kind} is empirically a Dirac mass")
    violated = (not degenerate) and deviation == 0.0 and variance - 3.0 * variance_se > energy
    return SobolevReport(a, mode, deviation == 0.0, deviation, mean, mean_se, variance, variance_se,
                         energy, degenerate, violated, n_mc)
