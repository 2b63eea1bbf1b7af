"""
Cylinder, generalized cylinder and interaction functionals on atomic measures,
with their Wasserstein gradients.

    F(μ)  = Ψ(∫φ_1 dμ, ..., ∫φ_k dμ)
    F̂(μ)  = Ψ(∫φ̂_1(x, μ[x]) dμ, ..., ∫φ̂_k(x, μ[x]) dμ)
    F_{h,ρ,f}(μ) = ∫ f(x) ρ(∫h(x, y) dμ(y)) dμ(x)

Gradients accept one point of shape (d,) or a batch of shape (n, d).
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from atomics.catalog import (
    OuterFunction,
    PairKernel,
    ScalarFunction,
    TestFunction,
    build_kernel,
    build_outer,
    build_scalar,
    build_test_function,
)
from atomics import capacity  # noqa: F401  registers the cutoff kernels
from atomics.errors import ConfigParse, DimensionMismatch, InvalidParameter, NonFactorizedInner
from atomics.measures import AtomicMeasure
from atomics.sampling import RandomMeasureLaw, mean_and_se, monte_carlo, sample_measure
from utils.constants import GROUPING_TOLERANCE
from utils.metrics import instrumented

logger = logging.getLogger(__name__)


def _points(x, dim: int):
    pts = np.asarray(x, dtype=float)
    single = pts.ndim <= 1
    pts = pts.reshape(-1, dim)
    return pts, single


def _common_dim(functions) -> int | None:
    dims = {f.dim for f in functions} - {None}
    if len(dims) > 1:
        raise DimensionMismatch(f"inner functions disagree on dimension: {sorted(dims)}")
    return dims.pop() if dims else None


def _check_dim(expected: int | None, mu: AtomicMeasure):
    if expected is not None and expected != mu.dim:
        raise DimensionMismatch(f"functional on R^{expected} applied to a measure on R^{mu.dim}")


@dataclass(frozen=True)
class CylinderFn:
    inner: tuple
    outer: OuterFunction

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        if not self.inner:
            raise InvalidParameter("a cylinder function needs k >= 1 inner functions")

    @property
    def k(self) -> int:
        return len(self.inner)

    @property
    def dim(self) -> int | None:
        return _common_dim(self.inner)

    @property
    def support_radius(self) -> float:
        return max(f.support_radius for f in self.inner)

    def to_dict(self) -> dict:
        return {"type": "cylinder", "inner": [f.to_dict() for f in self.inner], "outer": self.outer.to_dict()}


class GenInner(ABC):
    """φ̂(x, r) on R^d x (0, 1]; zero for r below `a_min`."""

    @property
    @abstractmethod
    def a_min(self) -> float:
        ...

    @property
    @abstractmethod
    def dim(self) -> int | None:
        ...

    @abstractmethod
    def value(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad_x(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def to_dict(self) -> dict:
        ...


@dataclass(frozen=True)
class FactorizedInner(GenInner):
    """φ̂(x, r) = f(x) ρ(r)."""
    f: TestFunction
    rho: ScalarFunction

    @property
    def a_min(self) -> float:
        return self.rho.a_min

    @property
    def dim(self) -> int | None:
        return self.f.dim

    def value(self, x, r):
        return self.f.value(x) * self.rho.value(r)

    def grad_x(self, x, r):
        return self.rho.value(r)[:, None] * self.f.grad(x)

    def to_dict(self) -> dict:
        return {"f": self.f.to_dict(), "rho": self.rho.to_dict()}


@dataclass(frozen=True)
class SumInner(GenInner):
    """Σ_j f_j(x) ρ_j(r); not of product form."""
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise InvalidParameter("sum inner needs at least one term")

    @property
    def a_min(self) -> float:
        return min(t.a_min for t in self.terms)

    @property
    def dim(self) -> int | None:
        return _common_dim(self.terms)

    def value(self, x, r):
        return sum(t.value(x, r) for t in self.terms)

    def grad_x(self, x, r):
        return sum(t.grad_x(x, r) for t in self.terms)

    def to_dict(self) -> dict:
        return {"terms": [t.to_dict() for t in self.terms]}


@dataclass(frozen=True)
class GenCylinderFn:
    inner: tuple
    outer: OuterFunction

    def __post_init__(self):
        object.__setattr__(self, "inner", tuple(self.inner))
        if not self.inner:
            raise InvalidParameter("a generalized cylinder function needs k >= 1 inner functions")
        for phi in self.inner:
            if not phi.a_min > 0.0:
                raise InvalidParameter(
                    f"each φ̂ must vanish below a positive mass threshold, got a_min={phi.a_min} for {phi.to_dict()}")

    @property
    def k(self) -> int:
        return len(self.inner)

    @property
    def dim(self) -> int | None:
        return _common_dim(self.inner)

    @property
    def a_min(self) -> float:
        return min(phi.a_min for phi in self.inner)

    @property
    def factorized(self) -> bool:
        return all(isinstance(phi, FactorizedInner) for phi in self.inner)

    def to_dict(self) -> dict:
        return {"type": "gen_cylinder", "inner": [phi.to_dict() for phi in self.inner],
                "outer": self.outer.to_dict()}


@dataclass(frozen=True)
class InteractionFn:
    f: TestFunction
    rho: ScalarFunction
    h: PairKernel
    bounds: dict = field(default_factory=dict)

    @property
    def dim(self) -> int | None:
        return self.f.dim

    def to_dict(self) -> dict:
        return {"type": "interaction", "f": self.f.to_dict(), "rho": self.rho.to_dict(),
                "h": self.h.to_dict(), "bounds": dict(self.bounds)}


# ---- cylinder functions ----

def linear_statistics(F: CylinderFn, mu: AtomicMeasure) -> np.ndarray:
    _check_dim(F.dim, mu)
    return np.array([mu.integrate(phi.value) for phi in F.inner])


def eval_cyl(F: CylinderFn, mu: AtomicMeasure) -> float:
    return float(F.outer.value(linear_statistics(F, mu)))


def grad_cyl(F: CylinderFn, x, mu: AtomicMeasure) -> np.ndarray:
    """Σ_j ∂_jΨ(L_Φ(μ)) ∇φ_j(x)."""
    dpsi = F.outer.grad(linear_statistics(F, mu))
    pts, single = _points(x, mu.dim)
    g = sum(dpsi[j] * phi.grad(pts) for j, phi in enumerate(F.inner))
    return g[0] if single else g


def cyl_values_batch(F: CylinderFn, weights: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """F on em(weights, locations[m]) for a stack of configurations of shape (m, n, d)."""
    m, n, d = locations.shape
    flat = locations.reshape(m * n, d)
    stats = np.column_stack([phi.value(flat).reshape(m, n) @ weights for phi in F.inner])
    return F.outer.value(stats)


# ---- generalized cylinder functions ----

def _atom_masses(mu: AtomicMeasure, pts: np.ndarray) -> np.ndarray:
    """μ[x] for each row of `pts`; exact coordinate match, 0 off the atoms."""
    # + 0.0 folds -0.0 into 0.0
    index = {(row + 0.0).tobytes(): a for row, a in zip(mu.locations, mu.a)}
    return np.array([index.get((np.ascontiguousarray(p) + 0.0).tobytes(), 0.0) for p in pts])


def gc_statistics(F: GenCylinderFn, mu: AtomicMeasure) -> np.ndarray:
    _check_dim(F.dim, mu)
    return np.array([float(mu.a @ phi.value(mu.locations, mu.a)) for phi in F.inner])


def eval_gc(F: GenCylinderFn, mu: AtomicMeasure) -> float:
    return float(F.outer.value(gc_statistics(F, mu)))


def grad_gc(F: GenCylinderFn, x, mu: AtomicMeasure) -> np.ndarray:
    """
    Σ_i ∂_iΨ(L̂(μ)) ∇_x φ̂_i(x, μ[x]).

    Off the atoms μ[x] = 0, where every φ̂_i vanishes, so the gradient is 0.
    """
    dpsi = F.outer.grad(gc_statistics(F, mu))
    pts, single = _points(x, mu.dim)
    masses = _atom_masses(mu, pts)
    g = sum(dpsi[i] * phi.grad_x(pts, masses) for i, phi in enumerate(F.inner))
    g = np.where((masses > 0.0)[:, None], g, 0.0)
    return g[0] if single else g


def gc_values_batch(F: GenCylinderFn, weights: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """
    F̂ on em(weights, locations[m]) for configurations of shape (m, n, d).

    Locations within one configuration are taken as pairwise distinct, so the
    atom masses are the weights themselves.
    """
    m, n, d = locations.shape
    flat = locations.reshape(m * n, d)
    r = np.tile(weights, m)
    stats = np.column_stack([phi.value(flat, r).reshape(m, n) @ weights for phi in F.inner])
    return F.outer.value(stats)


def F_a(mu: AtomicMeasure, a: float, mode: str = "count", tol: float = GROUPING_TOLERANCE) -> float:
    """
    Weight-counting functional.

    ``count``: Σ_i 1{a_i >= a}; ``mass``: ∫ 1_{[a,1]}(μ[x]) dμ(x).
    """
    if not 0.0 < a <= 1.0:
        raise InvalidParameter(f"threshold a must lie in (0, 1], got {a}")
    hit = mu.a >= a * (1.0 - tol)
    if mode == "count":
        return float(np.count_nonzero(hit))
    if mode == "mass":
        return math.fsum(mu.a[hit])
    raise InvalidParameter(f"unknown F_a mode {mode!r}")


# ---- interaction functionals ----

def _interaction_parts(G: InteractionFn, mu: AtomicMeasure):
    h = G.h
    n = mu.n_atoms
    xs = np.repeat(mu.locations, n, axis=0)
    ys = np.tile(mu.locations, (n, 1))
    gram = h.value(xs, ys).reshape(n, n)
    return gram @ mu.a


def interaction_value(G: InteractionFn, mu: AtomicMeasure) -> float:
    _check_dim(G.dim, mu)
    conv = _interaction_parts(G, mu)
    return float(mu.a @ (G.f.value(mu.locations) * G.rho.value(conv)))


def interaction_eval_grad(G: InteractionFn, mu: AtomicMeasure, x):
    """
    F_{h,ρ,f}(μ) and its gradient

        ρ(L(x))∇f(x) + ρ'(L(x)) f(x) ∫∇_x h(x, y) dμ(y) + ∫ ρ'(L(z)) f(z) ∇_y h(z, x) dμ(z)

    with L(x) = ∫h(x, y) dμ(y).
    """
    _check_dim(G.dim, mu)
    n = mu.n_atoms
    conv_atoms = _interaction_parts(G, mu)
    value = float(mu.a @ (G.f.value(mu.locations) * G.rho.value(conv_atoms)))

    pts, single = _points(x, mu.dim)
    m = pts.shape[0]
    px = np.repeat(pts, n, axis=0)
    atoms = np.tile(mu.locations, (m, 1))
    conv_x = G.h.value(px, atoms).reshape(m, n) @ mu.a
    grad_h_x = np.einsum("mnd,n->md", G.h.grad_x(px, atoms).reshape(m, n, -1), mu.a)
    outer_w = mu.a * G.rho.deriv(conv_atoms) * G.f.value(mu.locations)
    grad_h_y = np.einsum("mnd,n->md", G.h.grad_y(atoms, px).reshape(m, n, -1), outer_w)

    fx = G.f.value(pts)
    g = (G.rho.value(conv_x)[:, None] * G.f.grad(pts)
         + (G.rho.deriv(conv_x) * fx)[:, None] * grad_h_x
         + grad_h_y)
    return value, (g[0] if single else g)


# ---- approximation of generalized cylinders by cylinders ----

@dataclass(frozen=True)
class ApproximationReport:
    r: float
    value_error: float
    value_se: float
    grad_error: float
    grad_se: float
    n_samples: int

    @property
    def total(self) -> float:
        return self.value_error + self.grad_error


def _cutoff_parts(F: GenCylinderFn, h: PairKernel) -> list[InteractionFn]:
    if not F.factorized:
        raise NonFactorizedInner("cutoff approximation needs every φ̂ of the form f(x)ρ(r)")
    return [InteractionFn(phi.f, phi.rho, h) for phi in F.inner]


def cutoff_value_grad(F: GenCylinderFn, h: PairKernel, mu: AtomicMeasure, x=None):
    """F_n(μ) = Ψ(F_{h,ρ_1,f_1}(μ), ...) and its gradient at `x` (default: the atoms)."""
    parts = _cutoff_parts(F, h)
    x = mu.locations if x is None else x
    evals = [interaction_eval_grad(G, mu, x) for G in parts]
    stats = np.array([v for v, _ in evals])
    dpsi = F.outer.grad(stats)
    return float(F.outer.value(stats)), sum(dpsi[i] * g for i, (_, g) in enumerate(evals))


@instrumented("gc_cutoff_approximation")
def gc_cutoff_approximation(F: GenCylinderFn, cutoff: PairKernel, law: RandomMeasureLaw, r: float,
                            n_mc: int, seed: int, threads: int = 1) -> ApproximationReport:
    """
    L^r(Q) errors of the cylinder surrogate F_n = Ψ(F_{h,ρ_j,f_j}) against F̂:
    E|F_n - F̂|^r and E ∫|∇F_n - ∇F̂|^r dμ, each with its standard error.
    """
    if not r >= 1.0:
        raise InvalidParameter(f"exponent r must be >= 1, got {r}")
    _cutoff_parts(F, cutoff)

    def block(rng, m):
        out = np.empty((m, 2))
        for k in range(m):
            mu = sample_measure(law, rng)
            value_n, grad_n = cutoff_value_grad(F, cutoff, mu)
            exact = eval_gc(F, mu)
            grad_exact = grad_gc(F, mu.locations, mu)
            diff = np.linalg.norm(grad_n - grad_exact, axis=1)
            out[k] = (abs(value_n - exact) ** r, float(mu.a @ diff ** r))
        return out

    errs = monte_carlo(n_mc, seed, "gc_cutoff_approximation", block, threads)
    v, v_se = mean_and_se(errs[:, 0])
    g, g_se = mean_and_se(errs[:, 1])
    logger.info("Cutoff approximation errors: value %.3e ± %.1e, gradient %.3e ± %.1e", v, v_se, g, g_se)
    return ApproximationReport(float(r), v, v_se, g, g_se, n_mc)


# ---- JSON specs ----

def _build_gen_inner(spec) -> GenInner:
    if "terms" in spec:
        return SumInner(tuple(_build_gen_inner(t) for t in spec["terms"]))
    try:
        return FactorizedInner(build_test_function(spec["f"]), build_scalar(spec["rho"]))
    except KeyError as e:
        raise ConfigParse(f"generalized inner function needs 'f' and 'rho': {spec!r}") from e


def build_functional(spec: dict):
    """CylinderFn, GenCylinderFn or InteractionFn from its JSON spec."""
    kind = spec.get("type")
    try:
        if kind == "cylinder":
            return CylinderFn(tuple(build_test_function(s) for s in spec["inner"]), build_outer(spec["outer"]))
        if kind == "gen_cylinder":
            return GenCylinderFn(tuple(_build_gen_inner(s) for s in spec["inner"]), build_outer(spec["outer"]))
        if kind == "interaction":
            return InteractionFn(build_test_function(spec["f"]), build_scalar(spec["rho"]),
                                 build_kernel(spec["h"]), dict(spec.get("bounds", {})))
    except KeyError as e:
        raise ConfigParse(f"functional spec of type {kind!r} is missing {e}") from e
    raise ConfigParse(f"unknown functional type {kind!r}")


def evaluate(F, mu: AtomicMeasure) -> float:
    if isinstance(F, CylinderFn):
        return eval_cyl(F, mu)
    if isinstance(F, GenCylinderFn):
        return eval_gc(F, mu)
    return interaction_value(F, mu)


def gradient(F, x, mu: AtomicMeasure) -> np.ndarray:
    if isinstance(F, CylinderFn):
        return grad_cyl(F, x, mu)
    if isinstance(F, GenCylinderFn):
        return grad_gc(F, x, mu)
    return interaction_eval_grad(F, mu, x)[1]
