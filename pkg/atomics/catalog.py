"""
Closed-form function catalog with hand-coded derivatives.

Four families are registered, each buildable from a JSON spec
``{"kind": ..., <params>}``:

- `TestFunction`  φ: R^d -> R, vectorized over (n, d) point arrays.
- `OuterFunction` Ψ: R^k -> R, vectorized over (..., k) arrays.
- `ScalarFunction` ρ: R -> R (mass profiles and interaction profiles).
- `PairKernel`    h: R^d x R^d -> R, evaluated on paired (n, d) arrays.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field

import numpy as np

from atomics.errors import ConfigParse, InvalidParameter
from utils.constants import GROUPING_TOLERANCE

logger = logging.getLogger(__name__)

_REGISTRY: dict[str, dict[str, type]] = {"test": {}, "outer": {}, "scalar": {}, "kernel": {}}


def register(family: str, kind: str):
    def decorator(cls):
        _REGISTRY[family][kind] = cls
        cls.kind = kind
        return cls

    return decorator


def _arr(values) -> np.ndarray:
    return np.asarray(values, dtype=float).reshape(-1)


class _Spec:
    kind = "abstract"

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for key, value in asdict(self).items():
            out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


# ---- test functions ----

class TestFunction(_Spec, ABC):
    __test__ = False  # not a pytest class

    support_radius: float = math.inf

    @property
    def dim(self) -> int | None:
        """Dimension fixed by the parameters, None when any dimension works."""
        for name in ("center", "w"):
            v = getattr(self, name, None)
            if v is not None:
                return len(v)
        return None

    @abstractmethod
    def value(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad(self, x: np.ndarray) -> np.ndarray:
        ...


@register("test", "constant")
@dataclass(frozen=True)
class Constant(TestFunction):
    c: float = 1.0

    def value(self, x):
        return np.full(x.shape[0], float(self.c))

    def grad(self, x):
        return np.zeros_like(x, dtype=float)


@register("test", "linear")
@dataclass(frozen=True)
class Linear(TestFunction):
    w: tuple = (1.0,)
    b: float = 0.0

    def value(self, x):
        return x @ _arr(self.w) + self.b

    def grad(self, x):
        return np.broadcast_to(_arr(self.w), x.shape).astype(float)


@register("test", "quadratic")
@dataclass(frozen=True)
class Quadratic(TestFunction):
    """scale * |x - center|^2"""
    center: tuple = (0.0,)
    scale: float = 1.0

    def value(self, x):
        z = x - _arr(self.center)
        return self.scale * np.einsum("ij,ij->i", z, z)

    def grad(self, x):
        return 2.0 * self.scale * (x - _arr(self.center))


@register("test", "bump")
@dataclass(frozen=True)
class Bump(TestFunction):
    """height * exp(1 - 1/(1 - s^2)) with s = |x - center| / radius, zero for s >= 1."""
    center: tuple = (0.0,)
    radius: float = 1.0
    height: float = 1.0

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidParameter(f"bump radius must be > 0, got {self.radius}")

    @property
    def support_radius(self) -> float:
        return float(self.radius)

    def _parts(self, x):
        z = x - _arr(self.center)
        s2 = np.einsum("ij,ij->i", z, z) / self.radius ** 2
        inside = s2 < 1.0
        gap = np.where(inside, 1.0 - s2, 1.0)
        val = np.where(inside, self.height * np.exp(1.0 - 1.0 / gap), 0.0)
        return z, gap, val

    def value(self, x):
        return self._parts(x)[2]

    def grad(self, x):
        z, gap, val = self._parts(x)
        return (-2.0 * val / (self.radius ** 2 * gap ** 2))[:, None] * z


@register("test", "gaussian")
@dataclass(frozen=True)
class Gaussian(TestFunction):
    center: tuple = (0.0,)
    sigma: float = 1.0

    def value(self, x):
        z = x - _arr(self.center)
        return np.exp(-np.einsum("ij,ij->i", z, z) / (2.0 * self.sigma ** 2))

    def grad(self, x):
        z = x - _arr(self.center)
        return -(self.value(x) / self.sigma ** 2)[:, None] * z


@register("test", "tent")
@dataclass(frozen=True)
class Tent(TestFunction):
    """max(0, 1 - |x - center| / radius); gradient taken as 0 at the apex."""
    center: tuple = (0.0,)
    radius: float = 1.0

    @property
    def support_radius(self) -> float:
        return float(self.radius)

    def value(self, x):
        r = np.linalg.norm(x - _arr(self.center), axis=1)
        return np.maximum(0.0, 1.0 - r / self.radius)

    def grad(self, x):
        z = x - _arr(self.center)
        r = np.linalg.norm(z, axis=1)
        active = (r > 0.0) & (r < self.radius)
        scale = np.where(active, -1.0 / (self.radius * np.where(r > 0, r, 1.0)), 0.0)
        return scale[:, None] * z


@register("test", "cosine")
@dataclass(frozen=True)
class Cosine(TestFunction):
    """amplitude * cos(freq * x[axis] + phase)"""
    freq: float = 1.0
    phase: float = 0.0
    axis: int = 0
    amplitude: float = 1.0

    def value(self, x):
        return self.amplitude * np.cos(self.freq * x[:, self.axis] + self.phase)

    def grad(self, x):
        g = np.zeros_like(x, dtype=float)
        g[:, self.axis] = -self.amplitude * self.freq * np.sin(self.freq * x[:, self.axis] + self.phase)
        return g


@register("test", "product")
@dataclass(frozen=True)
class Product(TestFunction):
    factors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(
            f if isinstance(f, TestFunction) else build_test_function(f) for f in self.factors))
        if not self.factors:
            raise InvalidParameter("product needs at least one factor")

    @property
    def support_radius(self) -> float:
        return min(f.support_radius for f in self.factors)

    @property
    def dim(self) -> int | None:
        dims = {f.dim for f in self.factors} - {None}
        if len(dims) > 1:
            raise InvalidParameter(f"product factors disagree on dimension: {sorted(dims)}")
        return dims.pop() if dims else None

    def value(self, x):
        out = np.ones(x.shape[0])
        for f in self.factors:
            out = out * f.value(x)
        return out

    def grad(self, x):
        values = [f.value(x) for f in self.factors]
        g = np.zeros_like(x, dtype=float)
        for k, f in enumerate(self.factors):
            others = np.ones(x.shape[0])
            for j, v in enumerate(values):
                if j != k:
                    others = others * v
            g += others[:, None] * f.grad(x)
        return g

    def to_dict(self) -> dict:
        return {"kind": self.kind, "factors": [f.to_dict() for f in self.factors]}


# ---- outer functions ----

class OuterFunction(_Spec, ABC):
    @abstractmethod
    def value(self, u: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad(self, u: np.ndarray) -> np.ndarray:
        ...


@register("outer", "affine")
@dataclass(frozen=True)
class Affine(OuterFunction):
    coeffs: tuple = (1.0,)
    offset: float = 0.0

    def value(self, u):
        return np.asarray(u, dtype=float) @ _arr(self.coeffs) + self.offset

    def grad(self, u):
        return np.broadcast_to(_arr(self.coeffs), np.shape(u)).astype(float)


@register("outer", "square")
@dataclass(frozen=True)
class Square(OuterFunction):
    """(coeffs · u)^2"""
    coeffs: tuple = (1.0,)

    def value(self, u):
        return (np.asarray(u, dtype=float) @ _arr(self.coeffs)) ** 2

    def grad(self, u):
        s = np.asarray(u, dtype=float) @ _arr(self.coeffs)
        return 2.0 * np.asarray(s)[..., None] * _arr(self.coeffs)


@register("outer", "product")
@dataclass(frozen=True)
class ProductOuter(OuterFunction):
    def value(self, u):
        return np.prod(np.asarray(u, dtype=float), axis=-1)

    def grad(self, u):
        u = np.asarray(u, dtype=float)
        k = u.shape[-1]
        g = np.empty_like(u)
        for i in range(k):
            g[..., i] = np.prod(np.delete(u, i, axis=-1), axis=-1) if k > 1 else 1.0
        return g


@register("outer", "exp")
@dataclass(frozen=True)
class Exp(OuterFunction):
    """exp(coeffs · u)"""
    coeffs: tuple = (1.0,)

    def value(self, u):
        return np.exp(np.asarray(u, dtype=float) @ _arr(self.coeffs))

    def grad(self, u):
        return np.asarray(self.value(u))[..., None] * _arr(self.coeffs)


# ---- scalar functions ----

class ScalarFunction(_Spec, ABC):
    # φ̂(x, r) vanishes for r below this; 0 means no threshold
    a_min: float = 0.0
    smooth: bool = True

    @abstractmethod
    def value(self, r: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def deriv(self, r: np.ndarray) -> np.ndarray:
        ...


def _check_threshold(a_min: float):
    if not 0.0 <= a_min <= 1.0:
        raise InvalidParameter(f"mass threshold must lie in [0, 1], got {a_min}")


def _above(r: np.ndarray, values: np.ndarray, a_min: float) -> np.ndarray:
    if a_min <= 0.0:
        return values
    return np.where(r >= a_min, values, 0.0)


@register("scalar", "affine")
@dataclass(frozen=True)
class AffineScalar(ScalarFunction):
    slope: float = 1.0
    offset: float = 0.0
    a_min: float = 0.0

    def __post_init__(self):
        _check_threshold(self.a_min)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return _above(r, self.slope * r + self.offset, self.a_min)

    def deriv(self, r):
        return _above(np.asarray(r, dtype=float), np.full(np.shape(r), float(self.slope)), self.a_min)


@register("scalar", "indicator")
@dataclass(frozen=True)
class Indicator(ScalarFunction):
    """1 on [low, high]."""
    low: float = 0.5
    high: float = 1.0
    smooth = False

    def __post_init__(self):
        if not 0.0 < self.low <= self.high:
            raise InvalidParameter(f"indicator needs 0 < low <= high, got [{self.low}, {self.high}]")

    @property
    def a_min(self) -> float:
        return float(self.low)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return ((r >= self.low) & (r <= self.high)).astype(float)

    def deriv(self, r):
        return np.zeros(np.shape(r))


@register("scalar", "class_indicator")
@dataclass(frozen=True)
class ClassIndicator(ScalarFunction):
    """1 when r equals the class weight `a` up to relative tolerance `tol`."""
    a: float = 0.5
    tol: float = GROUPING_TOLERANCE
    smooth = False

    def __post_init__(self):
        if not 0.0 < self.a <= 1.0:
            raise InvalidParameter(f"class weight must lie in (0, 1], got {self.a}")

    @property
    def a_min(self) -> float:
        return float(self.a * (1.0 - self.tol))

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return (np.abs(r - self.a) <= self.tol * self.a).astype(float)

    def deriv(self, r):
        return np.zeros(np.shape(r))


@register("scalar", "smoothstep")
@dataclass(frozen=True)
class Smoothstep(ScalarFunction):
    """0 below `low`, 1 above `high`, cubic smoothstep in between."""
    low: float = 0.25
    high: float = 0.5

    def __post_init__(self):
        if not self.low < self.high:
            raise InvalidParameter(f"smoothstep needs low < high, got {self.low}, {self.high}")

    @property
    def a_min(self) -> float:
        return max(float(self.low), 0.0)

    def _s(self, r):
        return np.clip((np.asarray(r, dtype=float) - self.low) / (self.high - self.low), 0.0, 1.0)

    def value(self, r):
        s = self._s(r)
        return s * s * (3.0 - 2.0 * s)

    def deriv(self, r):
        s = self._s(r)
        return 6.0 * s * (1.0 - s) / (self.high - self.low)


@register("scalar", "tanh")
@dataclass(frozen=True)
class Tanh(ScalarFunction):
    scale: float = 1.0
    a_min: float = 0.0

    def __post_init__(self):
        _check_threshold(self.a_min)

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return _above(r, np.tanh(self.scale * r), self.a_min)

    def deriv(self, r):
        r = np.asarray(r, dtype=float)
        return _above(r, self.scale / np.cosh(self.scale * r) ** 2, self.a_min)


# ---- pair kernels ----

class PairKernel(_Spec, ABC):
    """h(x, y) on paired rows of two (n, d) arrays."""

    @abstractmethod
    def value(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    def grad(self, x, y) -> np.ndarray:
        """Full gradient ∇_{x,y}h as (n, 2d)."""
        return np.hstack([self.grad_x(x, y), self.grad_y(x, y)])


@register("kernel", "constant")
@dataclass(frozen=True)
class ConstantKernel(PairKernel):
    c: float = 1.0

    def value(self, x, y):
        return np.full(x.shape[0], float(self.c))

    def grad_x(self, x, y):
        return np.zeros_like(x, dtype=float)

    grad_y = grad_x


@register("kernel", "dot")
@dataclass(frozen=True)
class DotKernel(PairKernel):
    def value(self, x, y):
        return np.einsum("ij,ij->i", x, y)

    def grad_x(self, x, y):
        return np.asarray(y, dtype=float).copy()

    def grad_y(self, x, y):
        return np.asarray(x, dtype=float).copy()


@register("kernel", "gaussian")
@dataclass(frozen=True)
class GaussianKernel(PairKernel):
    sigma: float = 1.0

    def value(self, x, y):
        z = x - y
        return np.exp(-np.einsum("ij,ij->i", z, z) / (2.0 * self.sigma ** 2))

    def grad_x(self, x, y):
        return -(self.value(x, y) / self.sigma ** 2)[:, None] * (x - y)

    def grad_y(self, x, y):
        return -self.grad_x(x, y)


def _build(family: str, spec):
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigParse(f"{family} spec must be an object with a 'kind', got {spec!r}")
    params = dict(spec)
    kind = params.pop("kind")
    cls = _REGISTRY[family].get(kind)
    if cls is None:
        raise ConfigParse(f"unknown {family} function {kind!r}; expected one of {sorted(_REGISTRY[family])}")
    params = {k: tuple(v) if isinstance(v, list) and k != "factors" else v for k, v in params.items()}
    try:
        return cls(**params)
    except TypeError as e:
        raise ConfigParse(f"bad parameters for {family} function {kind!r}: {e}") from e


def build_test_function(spec) -> TestFunction:
    return _build("test", spec)


def build_outer(spec) -> OuterFunction:
    return _build("outer", spec)


def build_scalar(spec) -> ScalarFunction:
    return _build("scalar", spec)


def build_kernel(spec) -> PairKernel:
    return _build("kernel", spec)


def registered(family: str) -> list[str]:
    return sorted(_REGISTRY[family])
