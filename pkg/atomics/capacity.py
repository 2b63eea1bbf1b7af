"""
Capacity of the diagonal Δ = {(x, x)} of ν⊗ν.

Cutoffs here are radial: h(x, y) = G(|x - y|) with G = 1 on [0, inner] and
G = 0 on [outer, ∞). Every integral against ν⊗ν of a radial integrand is an
expectation over the pair distance ρ = |x - y|, which three estimators share:

- ``mc``   plain pairs x, y ~ ν.
- ``is``   importance sampling concentrated near the diagonal (bases with a
           bounded density, or the round circle/sphere where the law of ρ is
           known in closed form).
- ``grid`` Gauss-Legendre quadrature against the density of ρ (d = 1 bases and
           the round sphere).

Gradients are taken in the ambient pair space R^d x R^d, so
|∇_{x,y} h| = √2 |G'(ρ)| while each partial gradient has norm |G'(ρ)|.
"""

import logging
import math
from abc import abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special, stats

from atomics.catalog import PairKernel, register
from atomics.errors import InvalidBase, InvalidParameter, InvalidParameters
from atomics.sampling import BaseLaw, mean_and_se, monte_carlo
from utils.constants import DEFAULT_MC_SAMPLES, GAUSS_LEGENDRE_NODES
from utils.metrics import instrumented

logger = logging.getLogger(__name__)

METHODS = ("auto", "mc", "is", "grid")
_MOLLIFIER_PEAK = 35.0 / 32.0


def ball_volume(d: int) -> float:
    """ω_d, volume of the unit ball in R^d."""
    return float(math.pi ** (d / 2.0) / special.gamma(d / 2.0 + 1.0))


def quintic_smoothstep(s):
    """η: 1 at 0, 0 at 1, flat at both ends, |η'| <= 15/8."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def quintic_smoothstep_deriv(s):
    s = np.clip(s, 0.0, 1.0)
    return -30.0 * s * s * (1.0 - s) ** 2


class CutoffFunction(PairKernel):
    """Radial admissible cutoff: h = 1 on the diagonal, 0 <= h <= 1."""

    family = "abstract"
    inner = 0.0
    outer = math.inf

    @abstractmethod
    def profile(self, rho: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def profile_deriv(self, rho: np.ndarray) -> np.ndarray:
        ...

    def value(self, x, y):
        return self.profile(np.linalg.norm(np.asarray(x) - np.asarray(y), axis=1))

    def grad_x(self, x, y):
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        rho = np.linalg.norm(z, axis=1)
        safe = np.where(rho > 0.0, rho, 1.0)
        scale = np.where(rho > 0.0, self.profile_deriv(rho) / safe, 0.0)
        return scale[:, None] * z

    def grad_y(self, x, y):
        return -self.grad_x(x, y)


@register("kernel", "constant_cutoff")
@dataclass(frozen=True)
class ConstantCutoff(CutoffFunction):
    """h ≡ 1."""
    family = "constant"
    inner = math.inf

    def profile(self, rho):
        return np.ones(np.shape(rho))

    def profile_deriv(self, rho):
        return np.zeros(np.shape(rho))


@register("kernel", "log_cutoff")
@dataclass(frozen=True)
class LogCutoff(CutoffFunction):
    """
    G(ρ) = η((log ρ - log ε) / (log R - log ε)) with η the quintic smoothstep.

    Each partial gradient obeys |∇_x h| = |∇_y h| <= 2 / (ρ log(R/ε)), so the
    joint gradient on R^d x R^d is at most √2 times that.
    """
    eps: float
    R: float
    family = "log"

    def __post_init__(self):
        if not 0.0 < self.eps < self.R:
            raise InvalidParameters(f"log cutoff needs 0 < eps < R, got eps={self.eps}, R={self.R}")

    @property
    def inner(self) -> float:
        return float(self.eps)

    @property
    def outer(self) -> float:
        return float(self.R)

    @property
    def log_ratio(self) -> float:
        return math.log(self.R / self.eps)

    def _s(self, rho):
        rho = np.asarray(rho, dtype=float)
        safe = np.where(rho > 0.0, rho, self.eps)
        return (np.log(safe) - math.log(self.eps)) / self.log_ratio

    def profile(self, rho):
        rho = np.asarray(rho, dtype=float)
        return np.where(rho <= self.eps, 1.0, np.where(rho >= self.R, 0.0, quintic_smoothstep(self._s(rho))))

    def profile_deriv(self, rho):
        rho = np.asarray(rho, dtype=float)
        inside = (rho > self.eps) & (rho < self.R)
        safe = np.where(inside, rho, 1.0)
        return np.where(inside, quintic_smoothstep_deriv(self._s(rho)) / (safe * self.log_ratio), 0.0)

    def partial_gradient_bound(self, rho):
        """Bound on |∇_x h| alone at pair distance ρ."""
        return 2.0 / (np.asarray(rho, dtype=float) * self.log_ratio)

    def full_gradient_bound(self, rho):
        return math.sqrt(2.0) * self.partial_gradient_bound(rho)


@register("kernel", "mollified_cutoff")
@dataclass(frozen=True)
class MollifiedIndicator(CutoffFunction):
    """
    Radial mollification of 1{ρ < 2ε} by the triweight kernel (35/32)(1 - s²)³
    at half-width ε/2: G = 1 for ρ <= 1.5ε, G = 0 for ρ >= 2.5ε, |G'| <= 2.1875/ε.
    """
    eps: float
    family = "mollified"

    def __post_init__(self):
        if not self.eps > 0.0:
            raise InvalidParameters(f"mollified indicator needs eps > 0, got {self.eps}")

    @property
    def inner(self) -> float:
        return 1.5 * self.eps

    @property
    def outer(self) -> float:
        return 2.5 * self.eps

    def _u(self, rho):
        return np.clip((np.asarray(rho, dtype=float) - 2.0 * self.eps) / (0.5 * self.eps), -1.0, 1.0)

    def profile(self, rho):
        u = self._u(rho)
        cdf = _MOLLIFIER_PEAK * (u - u ** 3 + 0.6 * u ** 5 - u ** 7 / 7.0) + 0.5
        return np.clip(1.0 - cdf, 0.0, 1.0)

    def profile_deriv(self, rho):
        u = self._u(rho)
        return -_MOLLIFIER_PEAK * (1.0 - u * u) ** 3 / (0.5 * self.eps)

    @property
    def gradient_sup(self) -> float:
        return _MOLLIFIER_PEAK / (0.5 * self.eps)


def make_cutoff(family: str, eps: float | None = None, R: float | None = None) -> CutoffFunction:
    if family == "log":
        return LogCutoff(eps, math.sqrt(eps) if R is None else R)
    if family == "mollified":
        return MollifiedIndicator(eps)
    if family == "constant":
        return ConstantCutoff()
    raise InvalidParameter(f"unknown cutoff family {family!r}")


def eval_cutoff(h: PairKernel, x, y):
    """(h(x, y), ∇_{x,y} h(x, y)) for single points or paired (n, d) arrays."""
    single = np.ndim(x) == 1
    xs = np.atleast_2d(np.asarray(x, dtype=float))
    ys = np.atleast_2d(np.asarray(y, dtype=float))
    value, grad = h.value(xs, ys), h.grad(xs, ys)
    return (float(value[0]), grad[0]) if single else (value, grad)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    method: str
    n_samples: int = 0
    note: str = ""


@dataclass(frozen=True)
class CapacityEstimate(Estimate):
    value_term: float = 0.0
    grad_term: float = 0.0


# ---- pair-distance machinery ----

def _has_radial_law(base: BaseLaw) -> bool:
    return base.kind in ("uniform_circle", "uniform_sphere") or (base.dim == 1 and base.has_density)


def _pair_distance_density(base: BaseLaw, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if base.kind == "uniform_sphere":
        return np.where((rho >= 0.0) & (rho <= 2.0), 0.5 * rho, 0.0)
    if base.kind == "uniform_circle":
        inside = (rho >= 0.0) & (rho < 2.0)
        return np.where(inside, 1.0 / (math.pi * np.sqrt(np.where(inside, 1.0 - rho * rho / 4.0, 1.0))), 0.0)
    if base.dim != 1:
        raise InvalidBase(f"no closed-form pair distance law for {base.kind} in dimension {base.dim}")
    if base.kind == "uniform_box":
        length = base.high[0] - base.low[0]
        return np.where((rho >= 0.0) & (rho <= length), 2.0 * (length - rho) / length ** 2, 0.0)
    sigma = math.sqrt(base.cov[0][0])
    return 2.0 * stats.norm.pdf(rho, scale=sigma * math.sqrt(2.0))


def _pair_distance_top(base: BaseLaw) -> float:
    if base.kind == "gaussian":
        return 12.0 * math.sqrt(2.0 * base.cov[0][0])
    return base.diameter


def _radial_quadrature(base: BaseLaw, fn, breaks, nodes: int) -> float:
    """∫ fn(ρ) p(ρ) dρ piecewise between `breaks`; log variable on pieces away from 0."""
    if base.kind == "uniform_circle":
        raise InvalidBase("grid quadrature is not available on the circle; use mc or is")
    top = _pair_distance_top(base)
    cuts = sorted({0.0, top, *(b for b in breaks if 0.0 < b < top)})
    x, w = leggauss(nodes)
    total = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if lo > 0.0:
            u = 0.5 * (x + 1.0) * math.log(hi / lo) + math.log(lo)
            rho = np.exp(u)
            jac = 0.5 * math.log(hi / lo) * rho
        else:
            rho = 0.5 * (x + 1.0) * (hi - lo) + lo
            jac = np.full_like(rho, 0.5 * (hi - lo))
        total.append(np.dot(w, fn(rho) * _pair_distance_density(base, rho) * jac))
    return math.fsum(total)


def _unit_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _near_diagonal_block(base: BaseLaw, fn, inner: float, outer: float, mix: float = 0.5):
    """
    Importance-sampling block: ρ is drawn from a mixture of the uniform law on
    the inner ball and a log-uniform radius on (inner, outer).
    """
    d = base.dim
    radial = base.kind in ("uniform_circle", "uniform_sphere")
    log_ratio = math.log(outer / inner)
    omega = ball_volume(d)

    def block(rng, m):
        in_ball = rng.random(m) < mix
        u = rng.random(m)
        if radial:
            rho = np.where(in_ball, inner * u, inner * (outer / inner) ** u)
            q = np.where(in_ball, mix / inner, (1.0 - mix) / (log_ratio * rho))
            return fn(rho) * _pair_distance_density(base, rho) / q
        rho = np.where(in_ball, inner * u ** (1.0 / d), inner * (outer / inner) ** u)
        q = np.where(in_ball, mix / (omega * inner ** d), (1.0 - mix) / (log_ratio * d * omega * rho ** d))
        x = base.sample(rng, m)
        y = x + rho[:, None] * _unit_directions(rng, m, d)
        return fn(rho) * base.density(y) / q

    return block


def _pair_block(base: BaseLaw, fn):
    def block(rng, m):
        x, y = base.sample(rng, m), base.sample(rng, m)
        return fn(np.linalg.norm(x - y, axis=1))

    return block


def _resolve_method(method: str, base: BaseLaw, finite_support: bool) -> str:
    if method not in METHODS:
        raise InvalidParameter(f"unknown estimation method {method!r}; expected one of {METHODS}")
    if method != "auto":
        return method
    if base.dim == 1 and _has_radial_law(base):
        return "grid"
    if finite_support and (base.has_density or _has_radial_law(base)):
        return "is"
    return "mc"


@instrumented("strip_mass")
def strip_mass(base: BaseLaw, eps: float, method: str = "auto", n_samples: int = DEFAULT_MC_SAMPLES,
               seed: int = 0, nodes: int = GAUSS_LEGENDRE_NODES, threads: int = 1) -> Estimate:
    """ν⊗ν({|x - y| < ε})."""
    if not eps > 0.0:
        raise InvalidParameter(f"eps must be > 0, got {eps}")
    if eps >= base.diameter:
        return Estimate(1.0, 0.0, "exact", 0, "eps covers the support diameter")
    method = _resolve_method(method, base, True)

    def indicator(rho):
        return (rho < eps).astype(float)

    if method == "grid":
        value = _radial_quadrature(base, indicator, [eps], nodes)
        return Estimate(value, 0.0, "grid", 0, f"Gauss-Legendre, {nodes} nodes per piece")
    if method == "is":
        if base.kind in ("uniform_circle", "uniform_sphere"):
            block = _near_diagonal_block(base, indicator, eps, 2.0 * eps, mix=1.0)
        elif not base.has_density:
            raise InvalidBase(f"{base.kind} has no density for near-diagonal sampling")
        else:
            vol = ball_volume(base.dim) * eps ** base.dim

            def block(rng, m):
                x = base.sample(rng, m)
                rho = eps * rng.random(m) ** (1.0 / base.dim)
                return vol * base.density(x + rho[:, None] * _unit_directions(rng, m, base.dim))
    else:
        block = _pair_block(base, indicator)
    values = monte_carlo(n_samples, seed, "strip_mass", block, threads)
    value, se = mean_and_se(values)
    return Estimate(value, se, method, n_samples)


@instrumented("capacity_functional")
def capacity_functional(h: CutoffFunction, base: BaseLaw, r: float, method: str = "auto",
                        n_samples: int = DEFAULT_MC_SAMPLES, seed: int = 0,
                        nodes: int = GAUSS_LEGENDRE_NODES, threads: int = 1) -> CapacityEstimate:
    """∫ |h|^r + |∇h|^r dν⊗ν."""
    if not r >= 1.0:
        raise InvalidParameter(f"exponent r must be >= 1, got {r}")
    if not isinstance(h, CutoffFunction):
        # non-radial kernels: plain pairs with the generic gradient
        def generic(rng, m):
            x, y = base.sample(rng, m), base.sample(rng, m)
            return np.column_stack([np.abs(h.value(x, y)) ** r, np.linalg.norm(h.grad(x, y), axis=1) ** r])

        parts = monte_carlo(n_samples, seed, "capacity", generic, threads)
        value, se = mean_and_se(parts.sum(axis=1))
        return CapacityEstimate(value, se, "mc", n_samples, "", float(parts[:, 0].mean()), float(parts[:, 1].mean()))

    finite = math.isfinite(h.outer) and h.inner > 0.0
    method = _resolve_method(method, base, finite)

    def value_part(rho):
        return np.abs(h.profile(rho)) ** r

    def grad_part(rho):
        return (math.sqrt(2.0) * np.abs(h.profile_deriv(rho))) ** r

    def both(rho):
        return np.column_stack([value_part(rho), grad_part(rho)])

    if method == "grid":
        breaks = [b for b in (h.inner, h.outer) if math.isfinite(b)]
        v = _radial_quadrature(base, value_part, breaks, nodes)
        g = _radial_quadrature(base, grad_part, breaks, nodes)
        return CapacityEstimate(v + g, 0.0, "grid", 0, f"Gauss-Legendre, {nodes} nodes per piece", v, g)
    if method == "is":
        if not finite:
            raise InvalidParameter("near-diagonal sampling needs a cutoff with 0 < inner < outer < inf")
        if not (base.has_density or _has_radial_law(base)):
            raise InvalidBase(f"{base.kind} admits no near-diagonal proposal")
        block = _near_diagonal_block(base, both, h.inner, h.outer)
    else:
        block = _pair_block(base, both)

    parts = monte_carlo(n_samples, seed, "capacity", block, threads)
    value, se = mean_and_se(parts.sum(axis=1))
    logger.debug("capacity(%s, r=%s) = %.6g ± %.2g via %s", h.family, r, value, se, method)
    return CapacityEstimate(value, se, method, n_samples, "", float(parts[:, 0].mean()), float(parts[:, 1].mean()))


def log_cutoff_bound(d: int, eps: float, R: float, density_sup: float) -> float:
    """d ω_d 2^d ‖f‖∞ (log R/ε)^{1-d} plus the strip term ω_d R^d ‖f‖∞."""
    omega = ball_volume(d)
    return d * omega * 2 ** d * density_sup * math.log(R / eps) ** (1 - d) + omega * R ** d * density_sup


def mollified_bounds(d: int, eps: float, r: float, density_sup: float) -> dict:
    """Bound table for the mollified family: value term, gradient term and total."""
    omega = ball_volume(d)
    value = omega * (2.5 * eps) ** d * density_sup
    grad = ((math.sqrt(2.0) * _MOLLIFIER_PEAK / (0.5 * eps)) ** r
            * omega * ((2.5 * eps) ** d - (1.5 * eps) ** d) * density_sup)
    return {"value_term": value, "grad_term": grad, "total": value + grad}


@dataclass(frozen=True)
class RateRow:
    eps: float
    R: float
    value: float
    stderr: float
    bound: float


@dataclass(frozen=True)
class CapacityAudit:
    family: str
    dim: int
    r: float
    rows: list = field(default_factory=list)
    decreasing: bool = False
    passed: bool = False
    fitted_exponent: float = math.nan
    expected_exponent: float = math.nan
    # ε values left out of the sweep
    skipped: list = field(default_factory=list)


@instrumented("capacity_rate_audit")
def capacity_rate_audit(base: BaseLaw, r: float, eps_sweep, seed: int, family: str = "log",
                        n_samples: int = DEFAULT_MC_SAMPLES, method: str = "auto",
                        threads: int = 1) -> CapacityAudit:
    """
    Capacity values over an ε sweep against the explicit bounds.

    The log family uses R = √ε and is fitted against log(R/ε); the mollified
    family is fitted against ε.
    """
    if not base.has_density:
        raise InvalidBase(f"{base.kind} has no bounded density")
    d, fsup = base.dim, base.density_sup
    sweep = sorted((float(e) for e in eps_sweep), reverse=True)
    rows = []
    for k, eps in enumerate(sweep):
        h = make_cutoff(family, eps)
        est = capacity_functional(h, base, r, method, n_samples, seed + k, threads=threads)
        if family == "log":
            bound = log_cutoff_bound(d, eps, h.R, fsup)
            R = h.R
        else:
            bound = mollified_bounds(d, eps, r, fsup)["total"]
            R = h.outer
        rows.append(RateRow(eps, R, est.value, est.stderr, bound))

    passed = all(row.value <= 1.1 * row.bound + 3.0 * row.stderr for row in rows)
    decreasing = all(b.value <= a.value + 3.0 * math.hypot(a.stderr, b.stderr) for a, b in zip(rows, rows[1:]))
    fitted, expected = math.nan, math.nan
    if len(rows) > 1 and all(row.value > 0.0 for row in rows):
        values = np.log([row.value for row in rows])
        if family == "log":
            xs = np.log([math.log(row.R / row.eps) for row in rows])
            expected = 1.0 - d
        else:
            xs = np.log([row.eps for row in rows])
            expected = d - float(r)
        fitted = float(np.polyfit(xs, values, 1)[0])
    logger.info("Capacity audit (%s, d=%d, r=%s): passed=%s decreasing=%s slope=%.3f",
                family, d, r, passed, decreasing, fitted)
    return CapacityAudit(family, d, float(r), rows, decreasing, passed, fitted, expected)


def lipschitz_projection(x, y, eps: float):
    """
    p_ε on R^d x R^d: the diagonal projection inside the strip
    ‖π_{Δ⊥}(x, y)‖ < ε, otherwise a shift by ε towards the diagonal.

    Here ‖π_{Δ⊥}(x, y)‖ = |x - y| / √2.
    """
    if not eps > 0.0:
        raise InvalidParameter(f"eps must be > 0, got {eps}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    single = x.ndim <= 1
    dim = x.shape[-1] if x.ndim else 1
    xs, ys = x.reshape(-1, dim), y.reshape(-1, dim)
    mid = 0.5 * (xs + ys)
    perp = np.hstack([0.5 * (xs - ys), 0.5 * (ys - xs)])
    norm = np.linalg.norm(perp, axis=1)
    outside = norm >= eps
    factor = np.where(outside, eps / np.where(outside, norm, 1.0), 0.0)
    shifted = np.hstack([xs, ys]) - factor[:, None] * perp
    out = np.where(outside[:, None], shifted, np.hstack([mid, mid]))
    px, py = out[:, :dim], out[:, dim:]
    if single:
        return px[0] if x.ndim else float(px[0, 0]), py[0] if y.ndim else float(py[0, 0])
    return px, py
