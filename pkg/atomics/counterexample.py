"""
A W∞-Lipschitz curve of purely atomic measures on [0, 1] whose only lifting
is atomless.

Branch times are t_k = 1 - 2^-k. On [t_n, t_{n+1}) the measure is uniform on
the 2^{n+1} positions

    γ̃_ω(t) = Σ_k ω_k min((t - t_k)_+, 2^-(k+1)),   ω ∈ {0, 1}^{n+1},

so every atom splits in two at each branch time. The distorted variant
γ_ω(t) = (1 - t) γ̃_ω(t) ends in δ_0 at t = 1.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from atomics.dynamics import Lifting
from atomics.errors import InsufficientDepth, InvalidParameter
from atomics.measures import AtomicMeasure, MeasureCurve, WeightSequence, dirac, make_atomic
from atomics.sampling import stream
from atomics.superposition import Rejection, weight_spectrum_audit
from atomics.transport import wasserstein_inf
from utils.constants import MAX_DEPTH
from utils.metrics import instrumented

logger = logging.getLogger(__name__)


def branch_time(k: int) -> float:
    return 1.0 - math.ldexp(1.0, -k)


def segment(k: int) -> float:
    """Length of [t_k, t_{k+1}]."""
    return math.ldexp(1.0, -(k + 1))


@dataclass(frozen=True)
class BranchSchedule:
    depth: int = MAX_DEPTH

    @property
    def times(self) -> np.ndarray:
        return np.array([branch_time(k) for k in range(self.depth + 2)])


def level(t: float) -> int:
    """The n with t ∈ [t_n, t_{n+1}), read exactly off the binary exponent of 1 - t."""
    if not 0.0 <= t < 1.0:
        raise InvalidParameter(f"level is defined on [0, 1), got t={t}")
    mantissa, exponent = math.frexp(1.0 - t)
    return 1 - exponent if mantissa == 0.5 else -exponent


def _segments(t: float, n: int) -> np.ndarray:
    return np.array([min(max(t - branch_time(k), 0.0), segment(k)) for k in range(n + 1)])


def _check_time(t: float):
    if not 0.0 <= t <= 1.0:
        raise InvalidParameter(f"t must lie in [0, 1], got {t}")


def branch_position(omega, t: float, distorted: bool = False) -> float:
    _check_time(t)
    if t == 1.0:
        if distorted:
            return 0.0
        raise InsufficientDepth("the undistorted position at t = 1 needs the whole infinite string")
    bits = np.asarray(omega, dtype=int).reshape(-1)
    n = level(t)
    if bits.size <= n:
        raise InsufficientDepth(f"t={t} lies at level {n}; a string of length {bits.size} is too short")
    value = math.fsum(bits[: n + 1] * _segments(t, n))
    return (1.0 - t) * value if distorted else value


def branch_positions(t: float, distorted: bool = False) -> np.ndarray:
    """All 2^{n+1} positions at time t, n = level(t)."""
    n = level(t)
    positions = np.zeros(1)
    for seg in _segments(t, n):
        positions = np.concatenate([positions, positions + seg])
    return (1.0 - t) * positions if distorted else positions


def counterexample_measure(t: float, distorted: bool = False, max_depth: int = MAX_DEPTH) -> AtomicMeasure:
    _check_time(t)
    if t == 1.0:
        if distorted:
            return dirac([0.0])
        raise InvalidParameter("the undistorted curve is only defined on [0, 1)")
    n = level(t)
    if n > max_depth:
        raise InsufficientDepth(f"t={t} needs depth {n} > max_depth={max_depth}")
    positions = branch_positions(t, distorted)
    return make_atomic(np.full(positions.size, math.ldexp(1.0, -(n + 1))), positions)


def counterexample_curve(times, distorted: bool = False, max_depth: int = MAX_DEPTH) -> MeasureCurve:
    times = np.asarray(times, dtype=float)
    return MeasureCurve(times, tuple(counterexample_measure(t, distorted, max_depth) for t in times))


def depth_lifting(depth: int, times=None, distorted: bool = False) -> Lifting:
    """
    The lifting uniform on the 2^{depth+1} branch curves, sampled on `times`
    inside [0, t_{depth+1}).
    """
    if depth < 0:
        raise InvalidParameter(f"depth must be >= 0, got {depth}")
    horizon = branch_time(depth + 1)
    if times is None:
        times = np.linspace(0.0, horizon, 2 ** min(depth + 2, 12), endpoint=False)
    times = np.asarray(times, dtype=float)
    if times.size == 0 or times[0] < 0.0 or times[-1] >= horizon:
        raise InsufficientDepth(f"depth {depth} lifting covers [0, {horizon}) only")
    n_curves = 2 ** (depth + 1)
    bits = (np.arange(n_curves)[:, None] >> np.arange(depth + 1)[None, :]) & 1
    segs = np.stack([_segments(t, depth) for t in times])
    positions = segs @ bits.T
    if distorted:
        positions = (1.0 - times)[:, None] * positions
    weights = WeightSequence(np.full(n_curves, math.ldexp(1.0, -(depth + 1))))
    return Lifting(weights, times, positions[:, :, None])


@dataclass(frozen=True)
class LipschitzReport:
    max_ratio: float
    worst_pair: tuple
    n_pairs: int
    distorted: bool
    passed: bool


@instrumented("lipschitz_audit")
def lipschitz_audit(n_pairs: int, seed: int, distorted: bool = False, max_depth: int = 12) -> LipschitzReport:
    """
    Largest W∞(μ_s, μ_t) / (t - s) over random pairs in [0, t_{max_depth+1}).

    Undistorted curves pass when the ratio stays below 1 + 1e-9; distorted
    ones only report their empirical constant.
    """
    if n_pairs < 1:
        raise InvalidParameter(f"n_pairs must be >= 1, got {n_pairs}")
    rng = stream(seed, "lipschitz")
    cap = branch_time(max_depth + 1)
    worst, worst_pair, done = 0.0, (0.0, 0.0), 0
    while done < n_pairs:
        s, t = sorted(rng.uniform(0.0, cap, size=2))
        if s == t:
            continue
        w = wasserstein_inf(counterexample_measure(s, distorted, max_depth),
                            counterexample_measure(t, distorted, max_depth)).distance
        ratio = w / (t - s)
        if ratio > worst:
            worst, worst_pair = ratio, (float(s), float(t))
        done += 1
    passed = distorted or worst <= 1.0 + 1e-9
    logger.info("Lipschitz audit over %d pairs: max ratio %.12f", n_pairs, worst)
    return LipschitzReport(worst, worst_pair, n_pairs, distorted, passed)


@dataclass(frozen=True)
class ObstructionReport:
    depth: int
    n_curves: int
    max_atom_mass: float
    rejections: tuple = field(default_factory=tuple)

    @property
    def all_rejected(self) -> bool:
        return len(self.rejections) == self.depth and all(r is not None for r in self.rejections)


def lifting_obstruction_audit(depth: int) -> ObstructionReport:
    """
    Two footprints of the atomless lifting at finite depth: no constant-weight
    lifting survives any branch time t_1..t_depth, and the depth lifting puts
    mass 2^-(depth+1) on each of its curves.
    """
    if depth < 1:
        raise InvalidParameter(f"depth must be >= 1, got {depth}")
    rejections: list[Rejection | None] = []
    for k in range(1, depth + 1):
        before = 0.5 * (branch_time(k - 1) + branch_time(k))
        after = 0.5 * (branch_time(k) + branch_time(k + 1))
        audit = weight_spectrum_audit(counterexample_curve([before, after], max_depth=depth))
        rejections.append(audit.rejection)
    lam = depth_lifting(depth, times=[0.0])
    return ObstructionReport(depth, lam.n_atoms, float(lam.weights.weights.max()), tuple(rejections))


@dataclass(frozen=True)
class InjectivityWitness:
    first_difference: int
    t: float
    separation: float
    lower_bound: float


def injectivity_witness(omega, omega_prime, distorted: bool = True) -> InjectivityWitness:
    """
    Strings first differing at bit k are apart at t_{k+2} by at least
    (1 - t_{k+2}) 2^-(k+2) in the distorted curve (2^-(k+2) undistorted).
    """
    a = np.asarray(omega, dtype=int).reshape(-1)
    b = np.asarray(omega_prime, dtype=int).reshape(-1)
    size = min(a.size, b.size)
    diff = np.nonzero(a[:size] != b[:size])[0]
    if diff.size == 0:
        raise InvalidParameter("strings agree on their common prefix")
    k = int(diff[0])
    t = branch_time(k + 2)
    sep = abs(branch_position(a, t, distorted) - branch_position(b, t, distorted))
    bound = math.ldexp(1.0, -(k + 2)) * ((1.0 - t) if distorted else 1.0)
    return InjectivityWitness(k, t, sep, bound)
