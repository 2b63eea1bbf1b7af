"""
The round circle S¹ ⊂ R² and sphere S² ⊂ R³ as isometrically embedded
manifolds.

Intrinsic coordinates are the angle θ on S¹ and (latitude, longitude) on S².
Measures, curves and liftings move between the two pictures with
`transport_*`; particle flows on the sphere step along exact geodesics with a
fourth-order Runge-Kutta-Munthe-Kaas scheme in so(3) (so(2) on the circle).
The heat semigroup checks work on S¹ in angle coordinates, where Brownian
motion has the wrapped Gaussian as transition kernel.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.spatial.distance import cdist
from scipy.stats import norm

from atomics.capacity import CapacityAudit, LogCutoff, RateRow, capacity_functional, log_cutoff_bound
from atomics.catalog import Affine
from atomics.cylinder import GenCylinderFn, eval_gc, gc_values_batch
from atomics.dynamics import Lifting, marginal, time_grid
from atomics.errors import (
    InvalidParameter,
    NonFactorizedInner,
    NonTangentField,
    OffSurface,
    StepTooLarge,
    TiedWeights,
)
from atomics.fields import NonLocalField, register_field
from atomics.measures import AtomicMeasure, MeasureCurve, is_strictly_decreasing
from atomics.sampling import BaseLaw, mean_and_se, monte_carlo
from utils.constants import (
    ANGLE_QUADRATURE_NODES,
    DEFAULT_MC_SAMPLES,
    SURFACE_TOLERANCE,
    TANGENT_TOLERANCE,
    WRAPPED_IMAGES,
)
from utils.metrics import instrumented

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
_HERMITE_NODES = 64


class EmbeddedManifold(ABC):
    kind = "abstract"
    intrinsic_dim = 0
    area = 1.0
    # d_S <= C |x - y|, attained at antipodes
    equivalence_constant = math.pi / 2.0

    @property
    def ambient_dim(self) -> int:
        return self.intrinsic_dim + 1

    @abstractmethod
    def embed(self, coords) -> np.ndarray:
        ...

    @abstractmethod
    def unembed(self, points) -> np.ndarray:
        ...

    @abstractmethod
    def differential(self, coords: np.ndarray, v: np.ndarray) -> np.ndarray:
        """d embed at coords applied to the intrinsic velocity v."""

    def check_on_surface(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.ambient_dim)
        gap = np.abs(np.linalg.norm(pts, axis=1) - 1.0)
        if gap.size and gap.max() > SURFACE_TOLERANCE:
            raise OffSurface(f"point off the unit {self.kind} by {gap.max():.3e}")
        return pts

    def intrinsic_distance(self, x, y) -> np.ndarray:
        """Great-circle distance 2 arcsin(|x - y| / 2), pointwise over rows."""
        x, y = self.check_on_surface(x), self.check_on_surface(y)
        chord = np.linalg.norm(x - y, axis=1)
        return 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))

    def metric(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Pairwise intrinsic distances, usable as a transport ground metric."""
        chord = cdist(self.check_on_surface(x), self.check_on_surface(y))
        return 2.0 * np.arcsin(np.clip(0.5 * chord, 0.0, 1.0))

    def exp(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Exponential map at x of the ambient tangent vector v."""
        speed = np.linalg.norm(v, axis=1, keepdims=True)
        safe = np.where(speed > 0.0, speed, 1.0)
        return np.cos(speed) * x + np.sin(speed) * v / safe

    @abstractmethod
    def generator(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Element ξ of the rotation algebra with ξ·x = v."""

    @abstractmethod
    def rotate(self, xi: np.ndarray, x: np.ndarray) -> np.ndarray:
        """exp(ξ) x."""

    @abstractmethod
    def bracket(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        ...


class Circle(EmbeddedManifold):
    kind = "circle"
    intrinsic_dim = 1
    area = TWO_PI

    def embed(self, coords):
        theta = np.asarray(coords, dtype=float).reshape(-1)
        return np.column_stack([np.cos(theta), np.sin(theta)])

    def unembed(self, points):
        pts = self.check_on_surface(points)
        return np.mod(np.arctan2(pts[:, 1], pts[:, 0]), TWO_PI)[:, None]

    def differential(self, coords, v):
        theta = np.asarray(coords, dtype=float).reshape(-1)
        dv = np.asarray(v, dtype=float).reshape(-1)
        return dv[:, None] * np.column_stack([-np.sin(theta), np.cos(theta)])

    def generator(self, x, v):
        return (x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0])[:, None]

    def rotate(self, xi, x):
        c, s = np.cos(xi[:, 0]), np.sin(xi[:, 0])
        return np.column_stack([c * x[:, 0] - s * x[:, 1], s * x[:, 0] + c * x[:, 1]])

    def bracket(self, u, v):
        return np.zeros_like(u)


class Sphere2(EmbeddedManifold):
    kind = "sphere2"
    intrinsic_dim = 2
    area = 4.0 * math.pi

    def embed(self, coords):
        c = np.asarray(coords, dtype=float).reshape(-1, 2)
        lat, lon = c[:, 0], c[:, 1]
        return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])

    def unembed(self, points):
        pts = self.check_on_surface(points)
        lat = np.arcsin(np.clip(pts[:, 2], -1.0, 1.0))
        lon = np.arctan2(pts[:, 1], pts[:, 0])
        return np.column_stack([lat, lon])

    def differential(self, coords, v):
        c = np.asarray(coords, dtype=float).reshape(-1, 2)
        dv = np.asarray(v, dtype=float).reshape(-1, 2)
        lat, lon = c[:, 0], c[:, 1]
        d_lat = np.column_stack([-np.sin(lat) * np.cos(lon), -np.sin(lat) * np.sin(lon), np.cos(lat)])
        d_lon = np.column_stack([-np.cos(lat) * np.sin(lon), np.cos(lat) * np.cos(lon), np.zeros_like(lat)])
        return dv[:, :1] * d_lat + dv[:, 1:] * d_lon

    def generator(self, x, v):
        return np.cross(x, v)

    def rotate(self, xi, x):
        # Rodrigues
        angle = np.linalg.norm(xi, axis=1, keepdims=True)
        k = xi / np.where(angle > 0.0, angle, 1.0)
        return (x * np.cos(angle) + np.cross(k, x) * np.sin(angle)
                + k * np.sum(k * x, axis=1, keepdims=True) * (1.0 - np.cos(angle)))

    def bracket(self, u, v):
        return np.cross(u, v)


MANIFOLDS = {"circle": Circle, "sphere2": Sphere2}


def get_manifold(kind) -> EmbeddedManifold:
    if isinstance(kind, EmbeddedManifold):
        return kind
    cls = MANIFOLDS.get(kind)
    if cls is None:
        raise InvalidParameter(f"unknown manifold {kind!r}; expected one of {sorted(MANIFOLDS)}")
    return cls()


def intrinsic_distance(kind, x, y):
    d = get_manifold(kind).intrinsic_distance(x, y)
    return float(d[0]) if np.asarray(x).ndim == 1 else d


# ---- moving objects across the embedding ----

_DIRECTIONS = ("embed", "unembed")


def _map_points(manifold: EmbeddedManifold, points: np.ndarray, direction: str) -> np.ndarray:
    if direction == "embed":
        return manifold.embed(points)
    if direction == "unembed":
        return manifold.unembed(points)
    raise InvalidParameter(f"unknown direction {direction!r}; expected one of {_DIRECTIONS}")


def transport_measure(mu: AtomicMeasure, kind, direction: str = "embed") -> AtomicMeasure:
    """Pushforward by embed or by its inverse on the image; weights are kept."""
    manifold = get_manifold(kind)
    return marginal(mu.weights, _map_points(manifold, mu.locations, direction))


def transport_curve(curve: MeasureCurve, kind, direction: str = "embed") -> MeasureCurve:
    return MeasureCurve(curve.times, tuple(transport_measure(mu, kind, direction) for mu in curve.states))


def transport_lifting(lam: Lifting, kind, direction: str = "embed") -> Lifting:
    """Maps every trajectory node-wise; the weight sequence is reused as is."""
    manifold = get_manifold(kind)
    n_times, n_atoms, _ = lam.positions.shape
    mapped = _map_points(manifold, lam.positions.reshape(n_times * n_atoms, -1), direction)
    return Lifting(lam.weights, lam.times, mapped.reshape(n_times, n_atoms, -1))


# ---- tangent fields ----

class TangentField(NonLocalField):
    """Field on the embedded surface: ambient points in, ambient tangent vectors out."""

    def generator(self, t: float, x: np.ndarray, mu: AtomicMeasure, manifold: EmbeddedManifold,
                  v: np.ndarray) -> np.ndarray:
        return manifold.generator(x, v)


@register_field("rotation")
@dataclass(frozen=True)
class Rotation(TangentField):
    """Rigid rotation at angular speed omega about `axis` (ignored on S¹)."""
    omega: float = 1.0
    axis: tuple = (0.0, 0.0, 1.0)

    def _xi(self, x):
        if x.shape[1] == 2:
            return np.full((x.shape[0], 1), float(self.omega))
        a = np.asarray(self.axis, dtype=float)
        return np.broadcast_to(self.omega * a / np.linalg.norm(a), x.shape).copy()

    def __call__(self, t, x, mu):
        xi = self._xi(x)
        if x.shape[1] == 2:
            return xi * np.column_stack([-x[:, 1], x[:, 0]])
        return np.cross(xi, x)

    def generator(self, t, x, mu, manifold, v):
        return self._xi(x)

    @property
    def lipschitz(self) -> float:
        return abs(self.omega)

    @property
    def sup_bound(self) -> float:
        return abs(self.omega)


@register_field("kuramoto")
@dataclass(frozen=True)
class Kuramoto(NonLocalField):
    """Intrinsic circle field θ' = omega + coupling ∫ sin(φ - θ) dμ(φ) in angle coordinates."""
    omega: float = 0.0
    coupling: float = 1.0

    def __call__(self, t, x, mu):
        phases = mu.locations[:, 0]
        pull = np.sin(phases[None, :] - x[:, :1]) @ mu.a
        return (self.omega + self.coupling * pull)[:, None]

    @property
    def lipschitz(self) -> float:
        return abs(self.coupling)

    @property
    def sup_bound(self) -> float:
        return abs(self.omega) + abs(self.coupling)


@dataclass(frozen=True)
class PushforwardField(TangentField):
    """b̃(t, x, μ̃) = d embed(b(t, embed⁻¹(x), embed⁻¹_# μ̃))."""
    intrinsic: NonLocalField
    manifold: EmbeddedManifold = field(default_factory=Circle)
    kind = "pushforward"

    def __call__(self, t, x, mu):
        coords = self.manifold.unembed(x)
        mu_coords = transport_measure(mu, self.manifold, "unembed")
        v = np.asarray(self.intrinsic(t, coords, mu_coords), dtype=float)
        return self.manifold.differential(coords, v)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "intrinsic": self.intrinsic.to_dict(), "manifold": self.manifold.kind}


def pushforward_field(b: NonLocalField, kind="circle") -> PushforwardField:
    return PushforwardField(b, get_manifold(kind))


# ---- geodesic flow ----

def _tangent_velocity(b: NonLocalField, manifold: EmbeddedManifold, t: float, weights, x: np.ndarray):
    mu = marginal(weights, x)
    v = np.asarray(b(t, x, mu), dtype=float)
    normal = np.abs(np.einsum("ij,ij->i", v, x))
    if normal.size and normal.max() > TANGENT_TOLERANCE:
        raise NonTangentField(f"field {b.kind} has a normal component {normal.max():.3e} at t={t}")
    if isinstance(b, TangentField):
        return b.generator(t, x, mu, manifold, v)
    return manifold.generator(x, v)


def _dexpinv(manifold: EmbeddedManifold, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """dexp_u⁻¹(v) truncated after the second bracket."""
    uv = manifold.bracket(u, v)
    return v - 0.5 * uv + manifold.bracket(u, uv) / 12.0


@instrumented("geodesic_particle_flow")
def geodesic_particle_flow(mu0: AtomicMeasure, b: NonLocalField, T: float, dt: float, kind=None) -> Lifting:
    """
    Fixed-step RKMK4 for γ̇_i = b(t, γ_i, μ_t) on the embedded surface; every
    stage moves along an exact rotation, so atoms never leave the surface.
    """
    manifold = get_manifold(kind or ("circle" if mu0.dim == 2 else "sphere2"))
    if mu0.dim != manifold.ambient_dim:
        raise OffSurface(f"measure on R^{mu0.dim} cannot live on the {manifold.kind}")
    y = np.array(manifold.check_on_surface(mu0.locations))
    times = time_grid(T, dt)
    weights = mu0.weights
    out = np.empty((times.size, *y.shape))
    out[0] = y
    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        k1 = _tangent_velocity(b, manifold, t, weights, y)
        u2 = 0.5 * h * k1
        k2 = _dexpinv(manifold, u2, _tangent_velocity(b, manifold, t + 0.5 * h, weights, manifold.rotate(u2, y)))
        u3 = 0.5 * h * k2
        k3 = _dexpinv(manifold, u3, _tangent_velocity(b, manifold, t + 0.5 * h, weights, manifold.rotate(u3, y)))
        u4 = h * k3
        k4 = _dexpinv(manifold, u4, _tangent_velocity(b, manifold, t + h, weights, manifold.rotate(u4, y)))
        y = manifold.rotate((h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), y)
        if not np.all(np.isfinite(y)):
            raise StepTooLarge(f"geodesic flow blew up at t={times[k + 1]} with dt={h}")
        out[k + 1] = y
    logger.debug("Geodesic flow of %d atoms on the %s over %d steps", mu0.n_atoms, manifold.kind, times.size - 1)
    return Lifting(weights, times, out)


# ---- capacity of the diagonal on the surface ----

@instrumented("manifold_capacity_audit")
def manifold_capacity_audit(kind="sphere2", r: float = 2.0, eps_sweep=(1e-2, 1e-3, 1e-4), seed: int = 0,
                            n_samples: int = DEFAULT_MC_SAMPLES, method: str = "auto",
                            threads: int = 1) -> CapacityAudit:
    """
    Log-cutoff capacity with R = √ε against the uniform surface measure, with
    gradients taken in the ambient space and the Euclidean bound read in the
    intrinsic dimension k with density 1/area.
    """
    manifold = get_manifold(kind)
    base = BaseLaw("uniform_sphere" if manifold.kind == "sphere2" else "uniform_circle")
    if method == "auto":
        method = "grid" if manifold.kind == "sphere2" else "is"
    k, fsup = manifold.intrinsic_dim, 1.0 / manifold.area
    rows, skipped = [], []
    for j, eps in enumerate(sorted((float(e) for e in eps_sweep), reverse=True)):
        if not eps > 0.0:
            raise InvalidParameter(f"eps must be positive, got {eps}")
        R = math.sqrt(eps)
        if R <= eps:
            # R = √ε exceeds ε only below 1
            logger.warning("Skipping eps=%s on the %s: the log cutoff needs eps < R = %s", eps, manifold.kind, R)
            skipped.append(eps)
            continue
        est = capacity_functional(LogCutoff(eps, R), base, r, method, n_samples, seed + j, threads=threads)
        rows.append(RateRow(eps, R, est.value, est.stderr, log_cutoff_bound(k, eps, R, fsup)))

    if not rows:
        raise InvalidParameter(f"no eps in {list(eps_sweep)} lies in (0, 1)")
    passed = all(row.value <= 1.1 * row.bound + 3.0 * row.stderr for row in rows)
    decreasing = all(b.value <= a.value + 3.0 * math.hypot(a.stderr, b.stderr) for a, b in zip(rows, rows[1:]))
    fitted = math.nan
    fit_rows = [row for row in rows if row.value > 0.0]
    if len(fit_rows) > 1:
        xs = np.log([math.log(row.R / row.eps) for row in fit_rows])
        fitted = float(np.polyfit(xs, np.log([row.value for row in fit_rows]), 1)[0])
    logger.info("Manifold capacity audit (%s, r=%s): passed=%s decreasing=%s slope=%.3f",
                manifold.kind, r, passed, decreasing, fitted)
    return CapacityAudit("log", k, float(r), rows, decreasing, passed, fitted, 1.0 - k, skipped)


# ---- heat semigroup on the circle ----

def heat_expectation(fn, theta, sigma) -> np.ndarray:
    """
    E[fn(θ_i + σ_i Z) mod 2π] per atom: Gauss-Hermite when the kernel does not
    wrap, otherwise the wrapped Gaussian on an equispaced angle grid.
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    out = np.empty(theta.size)
    z, wz = hermegauss(_HERMITE_NODES)
    wz = wz / wz.sum()
    grid = np.arange(ANGLE_QUADRATURE_NODES) * (TWO_PI / ANGLE_QUADRATURE_NODES)
    images = np.arange(-WRAPPED_IMAGES, WRAPPED_IMAGES + 1) * TWO_PI
    f_grid = None
    for i, (th, s) in enumerate(zip(theta, sigma)):
        if s == 0.0:
            out[i] = float(fn(np.array([[th % TWO_PI]]))[0])
        elif 10.0 * s < math.pi:
            out[i] = float(wz @ fn(np.mod(th + s * z, TWO_PI)[:, None]))
        else:
            if f_grid is None:
                f_grid = np.asarray(fn(grid[:, None]), dtype=float)
            gap = grid[:, None] - th + images[None, :]
            kernel = norm.pdf(gap, scale=s).sum(axis=1)
            out[i] = float(f_grid @ kernel) * (TWO_PI / ANGLE_QUADRATURE_NODES)
    return out


def _angles(mu: AtomicMeasure) -> AtomicMeasure:
    if mu.dim == 2:
        return transport_measure(mu, "circle", "unembed")
    if mu.dim != 1:
        raise OffSurface(f"a measure on R^{mu.dim} is not a circle measure")
    return mu


def _separable(F: GenCylinderFn) -> bool:
    return isinstance(F, GenCylinderFn) and isinstance(F.outer, Affine) and F.factorized


def _coefficients(F: GenCylinderFn):
    coeffs = np.broadcast_to(np.asarray(F.outer.coeffs, dtype=float), (F.k,))
    return coeffs, float(F.outer.offset)


def _check_strict(mu: AtomicMeasure):
    if not is_strictly_decreasing(mu.weights):
        raise TiedWeights("heat semigroup identities need strictly decreasing weights")


@dataclass(frozen=True)
class HeatReport:
    t: float
    initial: float
    mc_value: float
    mc_se: float
    exact: float | None
    separable: bool
    n_samples: int
    note: str = ""

    @property
    def agrees(self) -> bool | None:
        if self.exact is None:
            return None
        return abs(self.mc_value - self.exact) <= 3.0 * self.mc_se + 1e-6


def exact_heat_value(F: GenCylinderFn, mu: AtomicMeasure, t: float) -> float:
    """H_t F̂(μ) for Ψ affine and φ̂_j = f_j ρ_j, atom by atom with variance 2t/a_i."""
    if not _separable(F):
        raise NonFactorizedInner("exact heat values need an affine outer function and product inner functions")
    mu = _angles(mu)
    a, theta = mu.a, mu.locations[:, 0]
    sigma = np.sqrt(2.0 * t / a)
    coeffs, offset = _coefficients(F)
    terms = [c * math.fsum(a * phi.rho.value(a) * heat_expectation(phi.f.value, theta, sigma))
             for c, phi in zip(coeffs, F.inner)]
    return offset + math.fsum(terms)


@instrumented("circle_heat_check")
def circle_heat_check(F: GenCylinderFn, mu: AtomicMeasure, t: float, n_mc: int, seed: int,
                      threads: int = 1) -> HeatReport:
    """
    Monte Carlo E[F̂(em(a, Y_t))] with independent circle Brownian motions of
    variance 2t/a_i per atom, against the exact value when F̂ is separable.
    """
    if not t >= 0.0:
        raise InvalidParameter(f"heat time must be >= 0, got {t}")
    mu = _angles(mu)
    _check_strict(mu)
    a, theta = mu.a, mu.locations[:, 0]
    sigma = np.sqrt(2.0 * t / a)

    def block(rng, m):
        y = np.mod(theta[None, :] + sigma[None, :] * rng.standard_normal((m, a.size)), TWO_PI)
        return gc_values_batch(F, a, y[:, :, None])

    values = monte_carlo(n_mc, seed, "circle_heat", block, threads)
    mc, se = mean_and_se(values)
    separable = _separable(F)
    exact = exact_heat_value(F, mu, t) if separable else None
    note = "" if separable else "functional is not separable; Monte Carlo only"
    if not separable:
        logger.warning("Heat check at t=%s: %s", t, note)
    report = HeatReport(float(t), eval_gc(F, mu), mc, se, exact, separable, n_mc, note)
    logger.info("Heat check at t=%s: mc=%.6f ± %.1e exact=%s", t, mc, se, exact)
    return report


@dataclass(frozen=True)
class BakryEmeryReport:
    t: float
    gradient_of_semigroup: float
    semigroup_of_gradient: float
    mc_value: float
    mc_se: float

    @property
    def holds(self) -> bool:
        return self.gradient_of_semigroup <= self.semigroup_of_gradient + 1e-6


def _atom_gradient(F: GenCylinderFn, a: np.ndarray):
    """Per-atom angular derivative of F̂ at fixed weights: Σ_j c_j ρ_j(a_i) f_j'(θ)."""
    coeffs, _ = _coefficients(F)
    rhos = [phi.rho.value(a) for phi in F.inner]

    def at(i: int, pts: np.ndarray) -> np.ndarray:
        return sum(c * r[i] * phi.f.grad(pts)[:, 0] for c, r, phi in zip(coeffs, rhos, F.inner))

    return at


@instrumented("bakry_emery_check")
def bakry_emery_check(F: GenCylinderFn, mu: AtomicMeasure, t: float, n_mc: int = 10 ** 4, seed: int = 0,
                      threads: int = 1) -> BakryEmeryReport:
    """
    |∇_W H_t F̂|²(μ) <= H_t(|∇_W F̂|²)(μ) with curvature K = 0, both sides by
    quadrature for separable F̂; the right side is also estimated by Monte Carlo.
    """
    if not _separable(F):
        raise NonFactorizedInner("the Bakry-Emery check needs a separable functional")
    if not t >= 0.0:
        raise InvalidParameter(f"heat time must be >= 0, got {t}")
    mu = _angles(mu)
    _check_strict(mu)
    a, theta = mu.a, mu.locations[:, 0]
    sigma = np.sqrt(2.0 * t / a)
    grad_at = _atom_gradient(F, a)

    smoothed = np.array([heat_expectation(lambda p, i=i: grad_at(i, p), theta[i:i + 1], sigma[i:i + 1])[0]
                         for i in range(a.size)])
    lhs = math.fsum(a * smoothed ** 2)
    squared = np.array([heat_expectation(lambda p, i=i: grad_at(i, p) ** 2, theta[i:i + 1], sigma[i:i + 1])[0]
                        for i in range(a.size)])
    rhs = math.fsum(a * squared)

    def block(rng, m):
        y = np.mod(theta[None, :] + sigma[None, :] * rng.standard_normal((m, a.size)), TWO_PI)
        return sum(a[i] * grad_at(i, y[:, i:i + 1]) ** 2 for i in range(a.size))

    mc, se = mean_and_se(monte_carlo(n_mc, seed, "bakry_emery", block, threads))
    logger.info("Bakry-Emery check at t=%s: %.6g <= %.6g", t, lhs, rhs)
    return BakryEmeryReport(float(t), lhs, rhs, mc, se)
