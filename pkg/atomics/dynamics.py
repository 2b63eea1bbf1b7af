"""
Particle dynamics for continuity equations driven by non-local fields.

Each atom follows γ̇_i = b(t, γ_i, μ_t) with μ_t = em(a, γ(t)); the weights a
never change. Integration is classical fixed-step RK4 on the shared grid
``linspace(0, T, n + 1)``, and μ_t is rebuilt at every stage.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from atomics import cylinder
from atomics.catalog import Affine, Constant, Cosine, Gaussian, Linear, Quadratic, Smoothstep, Square
from atomics.errors import (
    BoundaryIndex,
    DimensionMismatch,
    DuplicateLocation,
    FieldEvaluationFailure,
    GridMismatch,
    GridTooCoarse,
    InvalidParameter,
    StepTooLarge,
    ValidationError,
)
from atomics.fields import TIME_WEIGHTS, NonLocalField, TimeWeight
from atomics.measures import AtomicMeasure, MeasureCurve, WeightSequence, em, make_atomic
from atomics.sampling import RandomMeasureLaw, sample_measure, stream
from atomics.transport import wasserstein_inf, wasserstein_p
from utils.metrics import instrumented

logger = logging.getLogger(__name__)

MIN_SUPPORT_NODES = 8
RESIDUAL_COLUMNS = ("test_fn id", "xi id", "residual", "grid step")


def marginal(weights: WeightSequence, positions: np.ndarray) -> AtomicMeasure:
    """em(a, x); colliding positions are merged for evaluation."""
    try:
        return em(weights, positions)
    except DuplicateLocation:
        logger.debug("Atoms collide; merging for the marginal")
        return make_atomic(weights, positions)


@dataclass(frozen=True, eq=False)
class Lifting:
    """Σ_i a_i δ_{γ_i} with trajectories sampled on a shared grid, linear in between."""
    weights: WeightSequence
    times: np.ndarray
    positions: np.ndarray  # (n_times, n_atoms, d)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[0] != times.size or pos.shape[1] != len(self.weights):
            raise DimensionMismatch(
                f"positions of shape {pos.shape} do not fit {times.size} times and {len(self.weights)} atoms")
        if np.any(np.diff(times) <= 0.0):
            raise ValidationError("lifting times must be strictly increasing")
        times.flags.writeable = False
        pos.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    def __len__(self) -> int:
        return self.times.size

    def marginal(self, k: int) -> AtomicMeasure:
        return marginal(self.weights, self.positions[k])

    def curve(self) -> MeasureCurve:
        return MeasureCurve(self.times, tuple(self.marginal(k) for k in range(len(self))))

    def trajectory(self, i: int) -> np.ndarray:
        return self.positions[:, i, :]

    def at(self, t: float) -> np.ndarray:
        """Positions at time t by linear interpolation between nodes."""
        if not self.times[0] <= t <= self.times[-1]:
            raise InvalidParameter(f"t={t} outside [{self.times[0]}, {self.times[-1]}]")
        k = min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self) - 2)
        if k < 0:
            return self.positions[0].copy()
        s = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        return (1.0 - s) * self.positions[k] + s * self.positions[k + 1]


def _same_grid(grids, what: str):
    first = grids[0]
    for g in grids[1:]:
        if g.shape != first.shape or not np.array_equal(g, first):
            raise GridMismatch(f"{what} members do not share a time grid")


@dataclass(frozen=True)
class CurveEnsemble:
    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if self.members:
            _same_grid([c.times for c in self.members], "curve ensemble")

    @property
    def times(self) -> np.ndarray:
        return self.members[0].times

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class LiftingEnsemble:
    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        if self.members:
            _same_grid([lam.times for lam in self.members], "lifting ensemble")

    @property
    def times(self) -> np.ndarray:
        return self.members[0].times

    def __len__(self) -> int:
        return len(self.members)


def time_grid(T: float, dt: float) -> np.ndarray:
    if not (dt > 0.0 and math.isfinite(dt)):
        raise InvalidParameter(f"dt must be finite and > 0, got {dt}")
    if not T >= dt:
        raise InvalidParameter(f"horizon T={T} must be >= dt={dt}")
    n_steps = max(1, round(T / dt))
    return np.linspace(0.0, T, n_steps + 1)


def _velocity(b: NonLocalField, t: float, weights: WeightSequence, x: np.ndarray) -> np.ndarray:
    try:
        v = np.asarray(b(t, x, marginal(weights, x)), dtype=float)
    except ValidationError:
        raise
    except Exception as e:
        raise FieldEvaluationFailure(f"field {b.kind} failed at t={t}") from e
    if v.shape != x.shape or not np.all(np.isfinite(v)):
        raise FieldEvaluationFailure(f"field {b.kind} returned {v.shape} / non-finite values at t={t}")
    return v


@instrumented("integrate_particles")
def integrate_particles(mu0: AtomicMeasure, b: NonLocalField, T: float, dt: float) -> Lifting:
    """RK4 for the coupled system γ̇_i = b(t, γ_i, μ_t) with frozen weights."""
    times = time_grid(T, dt)
    weights = mu0.weights
    x = np.array(mu0.locations, dtype=float)
    out = np.empty((times.size, *x.shape))
    out[0] = x
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = _velocity(b, t, weights, x)
        k2 = _velocity(b, t + 0.5 * h, weights, x + 0.5 * h * k1)
        k3 = _velocity(b, t + 0.5 * h, weights, x + 0.5 * h * k2)
        k4 = _velocity(b, t + h, weights, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise StepTooLarge(f"positions blew up at t={times[k + 1]} with dt={h}")
        out[k + 1] = x
    logger.debug("Integrated %d atoms over %d steps", mu0.n_atoms, times.size - 1)
    return Lifting(weights, times, out)


@dataclass(frozen=True)
class ResidualReport:
    residual: float
    grid_step: float
    nodes_in_support: int
    time_term: float
    field_term: float


def _pairing(F, mu: AtomicMeasure, b: NonLocalField, t: float) -> float:
    """∫ ∇_W F(x, μ) · b(t, x, μ) dμ(x)."""
    grad = cylinder.gradient(F, mu.locations, mu)
    v = np.asarray(b(t, mu.locations, mu), dtype=float)
    return float(mu.a @ np.einsum("ij,ij->i", grad, v))


@instrumented("ce_residual")
def ce_residual(curve: MeasureCurve, b: NonLocalField, F, xi: TimeWeight) -> ResidualReport:
    """
    |∫ξ'(t) F(μ_t) dt + ∫ξ(t) ∫∇_W F · b dμ_t dt| with trapezoid quadrature
    on the curve's own grid.
    """
    t = curve.times
    in_support = int(np.count_nonzero((t > xi.t0) & (t < xi.t1)))
    if in_support < MIN_SUPPORT_NODES:
        raise GridTooCoarse(f"only {in_support} grid nodes inside supp ξ = [{xi.t0}, {xi.t1}]")
    values = np.array([cylinder.evaluate(F, mu) for mu in curve.states])
    pairing = np.array([_pairing(F, mu, b, tk) for tk, mu in zip(t, curve.states)])
    time_term = float(np.trapezoid(xi.deriv(t) * values, t))
    field_term = float(np.trapezoid(xi.value(t) * pairing, t))
    return ResidualReport(abs(time_term + field_term), curve.step, in_support, time_term, field_term)


def residual_test_functions(dim: int) -> dict:
    """Cylinder and generalized cylinder functionals on R^dim keyed by id."""
    origin = (0.0,) * dim
    axis = (1.0,) + (0.0,) * (dim - 1)
    return {
        "mass": cylinder.CylinderFn((Constant(1.0),), Affine()),
        "mean": cylinder.CylinderFn((Linear(axis),), Affine()),
        "second_moment": cylinder.CylinderFn((Quadratic(origin),), Affine()),
        "gaussian_square": cylinder.CylinderFn((Gaussian(origin, 1.0),), Square()),
        "heavy_cosine": cylinder.GenCylinderFn(
            (cylinder.FactorizedInner(Cosine(), Smoothstep(0.05, 0.3)),), Affine()),
    }


def residual_time_weights(t0: float, t1: float) -> dict:
    """Every registered time weight on the middle 80% of [t0, t1]."""
    margin = 0.1 * (t1 - t0)
    return {name: cls(t0 + margin, t1 - margin) for name, cls in TIME_WEIGHTS.items()}


@instrumented("residual_table")
def residual_table(curves, b: NonLocalField, functions: dict | None = None,
                   weights: dict | None = None) -> list[dict]:
    """
    One row per (test functional, time weight) holding the largest residual
    over `curves`. Defaults come from `residual_test_functions` and
    `residual_time_weights` on the first curve.
    """
    curves = list(curves)
    if not curves:
        raise InvalidParameter("residual table needs at least one curve")
    first = curves[0]
    if functions is None:
        functions = residual_test_functions(first.states[0].dim)
    if weights is None:
        weights = residual_time_weights(float(first.times[0]), float(first.times[-1]))
    rows = []
    for fn_id, F in functions.items():
        for xi_id, xi in weights.items():
            reports = [ce_residual(curve, b, F, xi) for curve in curves]
            rows.append(dict(zip(RESIDUAL_COLUMNS, (fn_id, xi_id, max(r.residual for r in reports),
                                                    reports[0].grid_step))))
    logger.debug("Residual table: %d rows over %d curves", len(rows), len(curves))
    return rows


def metric_derivative(curve: MeasureCurve, p: float, index: int) -> float:
    """Central difference W_p(μ_{k-1}, μ_{k+1}) / (t_{k+1} - t_{k-1})."""
    if not 0 < index < len(curve) - 1:
        raise BoundaryIndex(f"index {index} is not interior to a grid of {len(curve)} nodes")
    before, after = curve.states[index - 1], curve.states[index + 1]
    dist = wasserstein_inf(before, after) if math.isinf(p) else wasserstein_p(before, after, p)
    return dist.distance / (curve.times[index + 1] - curve.times[index - 1])


def particle_speed(mu: AtomicMeasure, b: NonLocalField, t: float, p: float) -> float:
    """(Σ_i a_i |b(t, x_i, μ)|^p)^{1/p}."""
    speeds = np.linalg.norm(np.asarray(b(t, mu.locations, mu), dtype=float), axis=1)
    if math.isinf(p):
        return float(speeds.max())
    return math.fsum(mu.a * speeds ** p) ** (1.0 / p)


@instrumented("evolve_ensemble")
def evolve_ensemble(law: RandomMeasureLaw, b: NonLocalField, n_members: int, T: float, dt: float,
                    seed: int, threads: int = 1) -> tuple[CurveEnsemble, LiftingEnsemble]:
    """Sample n_members initial measures from the law and flow each one."""
    if n_members < 1:
        raise InvalidParameter(f"n_members must be >= 1, got {n_members}")
    time_grid(T, dt)

    def member(i: int) -> Lifting:
        mu0 = sample_measure(law, stream(seed, "ensemble", i))
        return integrate_particles(mu0, b, T, dt)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            liftings = list(pool.map(member, range(n_members)))
    else:
        liftings = [member(i) for i in range(n_members)]
    logger.info("Evolved %d members to T=%s with dt=%s", n_members, T, dt)
    return CurveEnsemble(tuple(lam.curve() for lam in liftings)), LiftingEnsemble(tuple(liftings))


def ensemble_mean(ensemble: CurveEnsemble, fn) -> np.ndarray:
    """Per-node mean of fn(μ_t) over members, summed with fsum."""
    n = len(ensemble)
    return np.array([
        math.fsum(fn(curve.states[k]) for curve in ensemble.members) / n
        for k in range(len(ensemble.times))
    ])


def second_moment(mu: AtomicMeasure) -> float:
    return math.fsum(mu.a * np.einsum("ij,ij->i", mu.locations, mu.locations))
