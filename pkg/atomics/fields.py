"""
Non-local vector fields b(t, x, μ) and compactly supported time weights.

Fields are evaluated on a batch of points x of shape (n, d) against the
current measure μ and return velocities of the same shape. Each field records
a Lipschitz constant in x and a sup bound (math.inf when unbounded).
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass

import numpy as np

from atomics.errors import ConfigParse, InvalidParameter
from atomics.measures import AtomicMeasure

logger = logging.getLogger(__name__)

_FIELDS: dict[str, type] = {}


def register_field(kind: str):
    def decorator(cls):
        _FIELDS[kind] = cls
        cls.kind = kind
        return cls

    return decorator


class NonLocalField(ABC):
    kind = "abstract"

    @abstractmethod
    def __call__(self, t: float, x: np.ndarray, mu: AtomicMeasure) -> np.ndarray:
        ...

    @property
    def lipschitz(self) -> float:
        return math.inf

    @property
    def sup_bound(self) -> float:
        return math.inf

    def to_dict(self) -> dict:
        return {"kind": self.kind, **asdict(self)}


@register_field("zero")
@dataclass(frozen=True)
class ZeroField(NonLocalField):
    def __call__(self, t, x, mu):
        return np.zeros_like(x, dtype=float)

    @property
    def lipschitz(self) -> float:
        return 0.0

    @property
    def sup_bound(self) -> float:
        return 0.0


@register_field("constant")
@dataclass(frozen=True)
class ConstantField(NonLocalField):
    """Translation at velocity v."""
    v: tuple = (1.0,)

    def __call__(self, t, x, mu):
        return np.broadcast_to(np.asarray(self.v, dtype=float), x.shape).copy()

    @property
    def lipschitz(self) -> float:
        return 0.0

    @property
    def sup_bound(self) -> float:
        return float(np.linalg.norm(self.v))


@register_field("linear_decay")
@dataclass(frozen=True)
class LinearDecay(NonLocalField):
    """b = -rate * x."""
    rate: float = 1.0

    def __call__(self, t, x, mu):
        return -self.rate * x

    @property
    def lipschitz(self) -> float:
        return abs(self.rate)


@register_field("quartic_gradient")
@dataclass(frozen=True)
class QuarticGradient(NonLocalField):
    """b = -∇V with the convex potential V(x) = strength * |x|^4 / 4."""
    strength: float = 1.0

    def __call__(self, t, x, mu):
        return -self.strength * np.einsum("ij,ij->i", x, x)[:, None] * x

    def potential(self, x: np.ndarray) -> np.ndarray:
        return 0.25 * self.strength * np.einsum("ij,ij->i", x, x) ** 2


@register_field("mean_field_attraction")
@dataclass(frozen=True)
class MeanFieldAttraction(NonLocalField):
    """b = -strength * (x - ∫y dμ(y))."""
    strength: float = 1.0

    def __call__(self, t, x, mu):
        return -self.strength * (x - mu.a @ mu.locations / math.fsum(mu.a))

    @property
    def lipschitz(self) -> float:
        return abs(self.strength)


@register_field("gaussian_interaction")
@dataclass(frozen=True)
class GaussianInteraction(NonLocalField):
    """b = strength * ∫ (x - y) exp(-|x - y|^2 / 2σ^2) dμ(y); repulsive for strength > 0."""
    strength: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidParameter(f"sigma must be > 0, got {self.sigma}")

    def __call__(self, t, x, mu):
        diff = x[:, None, :] - mu.locations[None, :, :]
        kern = np.exp(-np.einsum("mnd,mnd->mn", diff, diff) / (2.0 * self.sigma ** 2))
        return self.strength * np.einsum("mnd,mn,n->md", diff, kern, mu.a)

    @property
    def lipschitz(self) -> float:
        return abs(self.strength)

    @property
    def sup_bound(self) -> float:
        return abs(self.strength) * self.sigma * math.exp(-0.5)


@dataclass(frozen=True)
class CallableField(NonLocalField):
    """Wraps a Python callable; not serializable."""
    fn: object
    lipschitz_const: float = math.inf
    sup: float = math.inf
    kind = "callable"

    def __call__(self, t, x, mu):
        return np.asarray(self.fn(t, x, mu), dtype=float)

    @property
    def lipschitz(self) -> float:
        return self.lipschitz_const

    @property
    def sup_bound(self) -> float:
        return self.sup

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": getattr(self.fn, "__name__", "anonymous")}


def build_field(spec) -> NonLocalField:
    if isinstance(spec, str):
        spec = {"kind": spec}
    params = dict(spec)
    kind = params.pop("kind", None)
    cls = _FIELDS.get(kind)
    if cls is None:
        raise ConfigParse(f"unknown field {kind!r}; expected one of {sorted(_FIELDS)}")
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}
    try:
        return cls(**params)
    except TypeError as e:
        raise ConfigParse(f"bad parameters for field {kind!r}: {e}") from e


# ---- time weights ----

class TimeWeight(ABC):
    """ξ, compactly supported in [t0, t1]."""

    def __init__(self, t0: float, t1: float):
        if not t0 < t1:
            raise InvalidParameter(f"time weight needs t0 < t1, got [{t0}, {t1}]")
        self.t0, self.t1 = float(t0), float(t1)

    def _s(self, t):
        return (2.0 * np.asarray(t, dtype=float) - self.t0 - self.t1) / (self.t1 - self.t0)

    @property
    def _ds(self) -> float:
        return 2.0 / (self.t1 - self.t0)

    @abstractmethod
    def value(self, t) -> np.ndarray:
        ...

    @abstractmethod
    def deriv(self, t) -> np.ndarray:
        ...

    def __repr__(self):
        return f"{type(self).__name__}({self.t0}, {self.t1})"


class PolynomialBump(TimeWeight):
    """(1 - s^2)^2 on the support."""

    def value(self, t):
        s = self._s(t)
        return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 2, 0.0)

    def deriv(self, t):
        s = self._s(t)
        return np.where(np.abs(s) < 1.0, -4.0 * s * (1.0 - s * s) * self._ds, 0.0)


class SmoothBump(TimeWeight):
    """exp(1 - 1/(1 - s^2)), C^∞."""

    def value(self, t):
        s = self._s(t)
        inside = np.abs(s) < 1.0
        gap = np.where(inside, 1.0 - s * s, 1.0)
        return np.where(inside, np.exp(1.0 - 1.0 / gap), 0.0)

    def deriv(self, t):
        s = self._s(t)
        inside = np.abs(s) < 1.0
        gap = np.where(inside, 1.0 - s * s, 1.0)
        return np.where(inside, np.exp(1.0 - 1.0 / gap) * (-2.0 * s / gap ** 2) * self._ds, 0.0)


TIME_WEIGHTS = {"poly": PolynomialBump, "smooth": SmoothBump}
