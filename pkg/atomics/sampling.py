"""
Reference laws Q_{π,ν} of random atomic measures.

A law pairs a weight law π (stick-breaking, Poisson, fixed) with an atomless
base law ν; a sample is em(a, x) with a ~ π and x_i i.i.d. ~ ν.

Randomness is drawn from counter-based Philox streams keyed by
(master seed, purpose label, indices), so results never depend on how the
Monte Carlo blocks are scheduled.
"""

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from atomics.errors import ConfigParse, InvalidBase, InvalidParameter
from atomics.measures import AtomicMeasure, WeightSequence, absorb_tail, em
from utils.constants import DEFAULT_TRUNCATION, MAX_TRUNCATION, MC_BLOCK_SIZE
from utils.metrics import instrumented, record_samples

logger = logging.getLogger(__name__)

WEIGHT_KINDS = ("stick_breaking", "poisson", "fixed")
BASE_KINDS = ("uniform_box", "gaussian", "uniform_circle", "uniform_sphere")


def stream(seed: int, label: str, *index: int) -> np.random.Generator:
    """Independent generator for (seed, label, index...)."""
    if int(seed) < 0 or any(int(i) < 0 for i in index):
        raise InvalidParameter("seeds and stream indices must be non-negative")
    tag = int.from_bytes(hashlib.blake2b(label.encode(), digest_size=8).digest(), "little")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), tag, *map(int, index)])))


def _rng(seed, label: str) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else stream(seed, label)


@dataclass(frozen=True)
class WeightLaw:
    kind: str
    beta: float | None = None
    lam: float | None = None
    weights: tuple | None = None

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise InvalidParameter(f"unknown weight law {self.kind!r}; expected one of {WEIGHT_KINDS}")
        if self.kind == "stick_breaking" and not (self.beta is not None and self.beta > 0):
            raise InvalidParameter(f"stick-breaking needs beta > 0, got {self.beta!r}")
        if self.kind == "poisson" and not (self.lam is not None and self.lam > 0):
            raise InvalidParameter(f"poisson needs lambda > 0, got {self.lam!r}")
        if self.kind == "fixed":
            if not self.weights:
                raise InvalidParameter("fixed weight law needs a weight list")
            # validates positivity and mass
            object.__setattr__(self, "weights", tuple(WeightSequence.from_values(self.weights).weights.tolist()))

    @classmethod
    def uniform(cls, n: int) -> "WeightLaw":
        if n < 1:
            raise InvalidParameter(f"uniform law needs n >= 1, got {n}")
        return cls("fixed", weights=(1.0 / n,) * n)

    @property
    def is_dirac(self) -> bool:
        return self.kind == "fixed"


@dataclass(frozen=True)
class BaseLaw:
    kind: str = "uniform_box"
    dim: int = 1
    low: tuple | None = None
    high: tuple | None = None
    mean: tuple | None = None
    cov: tuple | None = None

    def __post_init__(self):
        if self.kind not in BASE_KINDS:
            raise InvalidBase(f"unknown base law {self.kind!r}; expected one of {BASE_KINDS}")
        if self.kind == "uniform_circle":
            object.__setattr__(self, "dim", 2)
        elif self.kind == "uniform_sphere":
            object.__setattr__(self, "dim", 3)
        if self.dim < 1:
            raise InvalidBase(f"dimension must be >= 1, got {self.dim}")
        if self.kind == "uniform_box":
            low = tuple(self.low) if self.low is not None else (0.0,) * self.dim
            high = tuple(self.high) if self.high is not None else (1.0,) * self.dim
            if len(low) != self.dim or len(high) != self.dim or any(h <= l for l, h in zip(low, high)):
                raise InvalidBase(f"invalid box bounds {low} .. {high} in dimension {self.dim}")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        if self.kind == "gaussian":
            mean = tuple(self.mean) if self.mean is not None else (0.0,) * self.dim
            cov = np.asarray(self.cov if self.cov is not None else np.eye(self.dim), dtype=float)
            if len(mean) != self.dim or cov.shape != (self.dim, self.dim):
                raise InvalidBase("gaussian mean/cov do not match the dimension")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as e:
                raise InvalidBase("gaussian covariance must be positive definite") from e
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", tuple(map(tuple, cov.tolist())))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform_box":
            return rng.uniform(self.low, self.high, size=(n, self.dim))
        if self.kind == "gaussian":
            return rng.multivariate_normal(self.mean, self.cov, size=n, method="cholesky")
        if self.kind == "uniform_circle":
            theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
            return np.column_stack([np.cos(theta), np.sin(theta)])
        g = rng.standard_normal((n, 3))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    @property
    def has_density(self) -> bool:
        return self.kind in ("uniform_box", "gaussian")

    def density(self, x: np.ndarray) -> np.ndarray:
        """Lebesgue density at points x of shape (n, dim)."""
        if self.kind == "uniform_box":
            low, high = np.asarray(self.low), np.asarray(self.high)
            inside = np.all((x >= low) & (x <= high), axis=1)
            return inside / float(np.prod(high - low))
        if self.kind == "gaussian":
            return stats.multivariate_normal(self.mean, self.cov).pdf(x).reshape(-1)
        raise InvalidBase(f"{self.kind} has no density with respect to Lebesgue measure on R^{self.dim}")

    @property
    def density_sup(self) -> float:
        if self.kind == "uniform_box":
            return 1.0 / float(np.prod(np.subtract(self.high, self.low)))
        if self.kind == "gaussian":
            return float(1.0 / math.sqrt((2.0 * math.pi) ** self.dim * np.linalg.det(self.cov)))
        raise InvalidBase(f"{self.kind} has no bounded Lebesgue density")

    @property
    def diameter(self) -> float:
        if self.kind == "uniform_box":
            return float(np.linalg.norm(np.subtract(self.high, self.low)))
        if self.kind in ("uniform_circle", "uniform_sphere"):
            return 2.0
        return math.inf


@dataclass(frozen=True)
class RandomMeasureLaw:
    weight_law: WeightLaw
    base_law: BaseLaw = field(default_factory=BaseLaw)
    truncation: float = DEFAULT_TRUNCATION
    absorb_tail: bool = False

    def __post_init__(self):
        if not 0.0 < self.truncation <= MAX_TRUNCATION:
            raise InvalidParameter(f"truncation must lie in (0, {MAX_TRUNCATION}], got {self.truncation!r}")

    @property
    def dim(self) -> int:
        return self.base_law.dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RandomMeasureLaw":
        try:
            weight = WeightLaw(**data["weight_law"])
            base = BaseLaw(**data.get("base_law", {}))
            return cls(weight, base, float(data.get("truncation", DEFAULT_TRUNCATION)),
                       bool(data.get("absorb_tail", False)))
        except (KeyError, TypeError) as e:
            raise ConfigParse(f"malformed law specification: {e}") from e


def _parse_numbers(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigParse(f"expected comma separated numbers, got {text!r}") from e


def parse_law(text: str) -> RandomMeasureLaw:
    """
    Parse `kind:params[@base:params]` or a JSON object.

    Examples: ``poisson:1``, ``stick_breaking:2@gaussian:2``,
    ``fixed:0.5,0.3,0.2@uniform_box:2``, ``uniform:4@uniform_circle``.
    """
    text = text.strip()
    if text.startswith("{"):
        try:
            return RandomMeasureLaw.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigParse(f"law is not valid JSON: {e}") from e

    weight_part, _, base_part = text.partition("@")
    kind, _, params = weight_part.partition(":")
    values = _parse_numbers(params)
    if kind == "stick_breaking" and len(values) == 1:
        weight = WeightLaw("stick_breaking", beta=values[0])
    elif kind == "poisson" and len(values) == 1:
        weight = WeightLaw("poisson", lam=values[0])
    elif kind == "fixed" and values:
        weight = WeightLaw("fixed", weights=tuple(values))
    elif kind == "uniform" and len(values) == 1:
        weight = WeightLaw.uniform(int(values[0]))
    else:
        raise ConfigParse(f"cannot parse weight law {weight_part!r}")

    return RandomMeasureLaw(weight, parse_base(base_part) if base_part else BaseLaw())


def parse_base(text: str) -> BaseLaw:
    """`kind[:dim]`, e.g. ``uniform_box:2`` or ``uniform_sphere``; JSON objects are accepted too."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return BaseLaw(**json.loads(text))
        except (json.JSONDecodeError, TypeError) as e:
            raise ConfigParse(f"malformed base law {text!r}: {e}") from e
    kind, _, params = text.partition(":")
    dims = _parse_numbers(params)
    return BaseLaw(kind, dim=int(dims[0]) if dims else 1)


def sample_sticks(law: RandomMeasureLaw, seed) -> tuple[np.ndarray, float]:
    """Unsorted GEM(β) sticks until the residual stick drops below τ."""
    if law.weight_law.kind != "stick_breaking":
        raise InvalidParameter("sticks are only defined for stick-breaking laws")
    rng = _rng(seed, "weights")
    beta, tau = law.weight_law.beta, law.truncation
    chunk = int(math.ceil(beta * math.log(1.0 / tau))) + 8
    pieces = []
    remaining = 1.0
    while remaining >= tau:
        v = rng.beta(1.0, beta, size=chunk)
        left = remaining * np.cumprod(1.0 - v)
        before = np.concatenate([[remaining], left[:-1]])
        below = np.nonzero(left < tau)[0]
        stop = below[0] + 1 if below.size else chunk
        pieces.append(before[:stop] * v[:stop])
        remaining = float(left[stop - 1])
    sticks = np.concatenate(pieces)
    return sticks, remaining


def sample_weights(law: RandomMeasureLaw, seed) -> WeightSequence:
    wl = law.weight_law
    if wl.kind == "fixed":
        return WeightSequence(np.asarray(wl.weights))
    rng = _rng(seed, "weights")
    if wl.kind == "poisson":
        n = int(rng.poisson(wl.lam)) + 1
        return WeightSequence(np.full(n, 1.0 / n))

    sticks, _ = sample_sticks(law, rng)
    sticks = np.sort(sticks[sticks > 0.0])[::-1]
    tail = max(0.0, 1.0 - math.fsum(sticks))
    return WeightSequence(sticks, tail)


def sample_locations(base: BaseLaw, seed, n: int) -> np.ndarray:
    """n i.i.d. points from `base`, redrawing exact collisions."""
    rng = _rng(seed, "locations")
    x = base.sample(rng, n)
    while True:
        _, first = np.unique(x, axis=0, return_index=True)
        if first.size == n:
            return x
        dup = np.setdiff1d(np.arange(n), first)
        logger.debug("Redrawing %d colliding locations", dup.size)
        x[dup] = base.sample(rng, dup.size)


def sample_measure(law: RandomMeasureLaw, seed) -> AtomicMeasure:
    if isinstance(seed, np.random.Generator):
        w_rng, x_rng = seed, seed
    else:
        w_rng, x_rng = stream(seed, "weights"), stream(seed, "locations")
    ws = sample_weights(law, w_rng)
    extra = 1 if (law.absorb_tail and ws.tail_mass > 0.0) else 0
    x = sample_locations(law.base_law, x_rng, len(ws) + extra)
    mu = em(ws, x[:len(ws)])
    if extra:
        mu = absorb_tail(mu, x[-1])
    return mu


def monte_carlo(n_samples: int, seed: int, label: str,
                block_fn: Callable[[np.random.Generator, int], np.ndarray],
                threads: int = 1, block_size: int = MC_BLOCK_SIZE) -> np.ndarray:
    """
    Run `block_fn(rng, m)` over fixed-size blocks, each on its own stream.

    Blocks are concatenated in block order, so the result is identical for
    any number of threads.
    """
    sizes = [block_size] * (n_samples // block_size)
    if n_samples % block_size:
        sizes.append(n_samples % block_size)

    def run(b: int) -> np.ndarray:
        return np.asarray(block_fn(stream(seed, label, b), sizes[b]))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(run, range(len(sizes))))
    else:
        blocks = [run(b) for b in range(len(sizes))]
    record_samples(label, n_samples)
    return np.concatenate(blocks)


def mean_and_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return float(values.mean()), math.inf
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


@dataclass(frozen=True)
class BarycenterCoefficients:
    c1: float
    c2: float
    c1_se: float
    c2_se: float
    n_samples: int


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    z: float
    passed: bool


@dataclass(frozen=True)
class BarycenterReport:
    coefficients: BarycenterCoefficients
    first_order: IdentityCheck
    second_order: IdentityCheck


def _weight_moments(law: RandomMeasureLaw, n_samples: int, seed: int, label: str, threads: int):
    def block(rng, m):
        out = np.empty((m, 2))
        for k in range(m):
            a = sample_weights(law, rng).weights
            out[k] = (math.fsum(a), math.fsum(a * a))
        return out

    return monte_carlo(n_samples, seed, label, block, threads)


@instrumented("estimate_barycenter_coeffs")
def estimate_barycenter_coeffs(law: RandomMeasureLaw, n_samples: int, seed: int,
                               threads: int = 1) -> BarycenterCoefficients:
    """Monte Carlo means of Σ_{i≠j} a_i a_j and Σ_i a_i²."""
    if n_samples < 100:
        raise InvalidParameter(f"n_samples must be >= 100, got {n_samples}")
    moments = _weight_moments(law, n_samples, seed, "barycenter", threads)
    c1, c1_se = mean_and_se(moments[:, 0] ** 2 - moments[:, 1])
    c2, c2_se = mean_and_se(moments[:, 1])
    return BarycenterCoefficients(c1, c2, c1_se, c2_se, n_samples)


def _compare(lhs, lhs_se, rhs, rhs_se, k: float = 3.0) -> IdentityCheck:
    pooled = math.sqrt(lhs_se ** 2 + rhs_se ** 2)
    gap = abs(lhs - rhs)
    z = gap / pooled if pooled > 0 else (0.0 if gap <= 1e-12 else math.inf)
    return IdentityCheck(lhs, lhs_se, rhs, rhs_se, z, gap <= k * pooled + 1e-12)


@instrumented("verify_barycenter_identity")
def verify_barycenter_identity(law: RandomMeasureLaw, g: Callable, n_samples: int, seed: int,
                               f: Callable | None = None, threads: int = 1) -> BarycenterReport:
    """
    Check the first and second order barycenter identities of Q_{π,ν}.

    `g(X, Y)` maps paired points of shape (n, d) to (n,) values and `f(X)`
    maps (n, d) to (n,); by default f(x) = g(x, x).
    """
    if f is None:
        def f(x):
            return g(x, x)

    def lhs_block(rng, m):
        out = np.empty((m, 2))
        for k in range(m):
            mu = sample_measure(law, rng)
            a, x = mu.a, mu.locations
            i, j = np.meshgrid(np.arange(a.size), np.arange(a.size), indexing="ij")
            gram = np.asarray(g(x[i.ravel()], x[j.ravel()]), dtype=float).reshape(a.size, a.size)
            out[k] = (float(a @ np.asarray(f(x), dtype=float)), float(a @ gram @ a))
        return out

    def base_block(rng, m):
        x = law.base_law.sample(rng, m)
        y = law.base_law.sample(rng, m)
        return np.column_stack([np.asarray(g(x, y), dtype=float), np.asarray(g(x, x), dtype=float),
                                np.asarray(f(x), dtype=float)])

    lhs = monte_carlo(n_samples, seed, "barycenter_lhs", lhs_block, threads)
    base = monte_carlo(n_samples, seed, "barycenter_base", base_block, threads)
    moments = _weight_moments(law, n_samples, seed, "barycenter_weights", threads)

    c1_s = moments[:, 0] ** 2 - moments[:, 1]
    c2_s = moments[:, 1]
    c1, c1_se = mean_and_se(c1_s)
    c2, c2_se = mean_and_se(c2_s)
    m_off, m_off_se = mean_and_se(base[:, 0])
    m_diag, m_diag_se = mean_and_se(base[:, 1])
    m_f, m_f_se = mean_and_se(base[:, 2])
    mass, mass_se = mean_and_se(moments[:, 0])

    _, r2_se = mean_and_se(m_off * c1_s + m_diag * c2_s)
    rhs2 = c1 * m_off + c2 * m_diag
    rhs2_se = math.sqrt(r2_se ** 2 + (c1 * m_off_se) ** 2 + (c2 * m_diag_se) ** 2)
    rhs1 = mass * m_f
    rhs1_se = math.sqrt((m_f * mass_se) ** 2 + (mass * m_f_se) ** 2)

    first = _compare(*mean_and_se(lhs[:, 0]), rhs1, rhs1_se)
    second = _compare(*mean_and_se(lhs[:, 1]), rhs2, rhs2_se)
    logger.info("Barycenter identities for %s: first z=%.2f, second z=%.2f",
                law.weight_law.kind, first.z, second.z)
    return BarycenterReport(BarycenterCoefficients(c1, c2, c1_se, c2_se, n_samples), first, second)


def poisson_count_gof(law: RandomMeasureLaw, n_samples: int, seed: int) -> float:
    """Chi-square p-value of the atom count against Poisson(λ) + 1."""
    if law.weight_law.kind != "poisson":
        raise InvalidParameter("atom count test applies to poisson laws only")
    rng = stream(seed, "poisson_gof")
    counts = np.array([len(sample_weights(law, rng)) for _ in range(n_samples)])
    lam = law.weight_law.lam
    k_max = int(stats.poisson.ppf(1.0 - 1e-4, lam)) + 1
    ks = np.arange(1, k_max + 1)
    expected = stats.poisson.pmf(ks - 1, lam) * n_samples
    observed = np.array([(counts == k).sum() for k in ks], dtype=float)
    expected = np.append(expected, n_samples - expected.sum())
    observed = np.append(observed, (counts > k_max).sum())
    # pool sparse cells into their left neighbour
    while expected.size > 2 and expected[-1] < 5.0:
        expected[-2] += expected[-1]
        observed[-2] += observed[-1]
        expected, observed = expected[:-1], observed[:-1]
    return float(stats.chisquare(observed, expected).pvalue)
