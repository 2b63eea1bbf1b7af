import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linprog

from atomics.errors import DimensionMismatch, InvalidProfile
from atomics.measures import dirac, make_atomic
from atomics.transport import (
    atomic_convergence_report,
    atomic_metric,
    bottleneck_feasible,
    ground_distances,
    wasserstein_inf,
    wasserstein_p,
    weight_gap,
)

from conftest import random_measure


def _lp_oracle(mu, nu, p):
    """W_p by a dense linear program over all couplings."""
    cost = ground_distances(mu, nu) ** p
    n, m = cost.shape
    rows = np.zeros((n + m, n * m))
    for i in range(n):
        rows[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        rows[n + j, j::m] = 1.0
    res = linprog(cost.ravel(), A_eq=rows, b_eq=np.concatenate([mu.a, nu.a]), bounds=(0, None), method="highs")
    return res.fun ** (1.0 / p)


def test_w1_between_diracs():
    assert wasserstein_p(dirac([0.0]), dirac([1.0]), 1.0).distance == 1.0
    assert wasserstein_inf(dirac([0.0]), dirac([1.0])).distance == 1.0


def test_identity_gives_zero(rng):
    mu = random_measure(rng, 5, 2)
    for p in (1.0, 2.0):
        assert wasserstein_p(mu, mu, p).distance == pytest.approx(0.0, abs=1e-6)
    assert wasserstein_inf(mu, mu).distance == 0.0


def test_w1_half_shift():
    mu = make_atomic([0.5, 0.5], [[0.0], [1.0]])
    nu = make_atomic([0.5, 0.5], [[0.0], [2.0]])
    assert wasserstein_p(mu, nu, 1.0).distance == pytest.approx(0.5)


def test_plan_marginals(rng):
    mu, nu = random_measure(rng, 4, 2), random_measure(rng, 5, 2)
    plan = wasserstein_p(mu, nu, 2.0).plan
    assert np.all(plan.flow >= 0.0)
    assert plan.marginal_error(mu.a, nu.a) <= 1e-10


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        wasserstein_p(dirac([0.0]), dirac([0.0, 0.0]))


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_matches_linear_program(rng, p):
    for _ in range(20):
        mu, nu = random_measure(rng, 4, 2), random_measure(rng, 5, 2)
        assert wasserstein_p(mu, nu, p).distance == pytest.approx(_lp_oracle(mu, nu, p), rel=1e-8, abs=1e-10)


def test_quantile_path_matches_simplex(rng):
    for _ in range(20):
        mu, nu = random_measure(rng, 3, 1), random_measure(rng, 5, 1)
        quantile = wasserstein_p(mu, nu, 2.0).distance
        simplex = wasserstein_p(mu, nu, 2.0, metric=lambda x, y: np.abs(x - y.T)).distance
        assert quantile == pytest.approx(simplex, rel=1e-9, abs=1e-12)


def test_metric_axioms(rng):
    for _ in range(50):
        mu, nu, eta = (random_measure(rng, int(rng.integers(1, 7)), 2) for _ in range(3))
        d_mn = wasserstein_p(mu, nu, 1.0).distance
        assert d_mn == pytest.approx(wasserstein_p(nu, mu, 1.0).distance, abs=1e-12)
        assert d_mn <= wasserstein_p(mu, eta, 1.0).distance + wasserstein_p(eta, nu, 1.0).distance + 1e-9


def test_monotone_in_p(rng):
    for _ in range(30):
        mu, nu = random_measure(rng, 4, 2), random_measure(rng, 4, 2)
        w1 = wasserstein_p(mu, nu, 1.0).distance
        w2 = wasserstein_p(mu, nu, 2.0).distance
        w_inf = wasserstein_inf(mu, nu).distance
        assert w1 <= w2 + 1e-9
        assert w2 <= w_inf + 1e-9


def test_w_inf_is_tight(rng):
    for _ in range(20):
        mu, nu = random_measure(rng, 4, 2), random_measure(rng, 5, 2)
        w = wasserstein_inf(mu, nu).distance
        assert bottleneck_feasible(mu, nu, w)[0]
        assert not bottleneck_feasible(mu, nu, w - 1e-9)[0]


def test_w_inf_quantile_matches_bisection(rng):
    for _ in range(20):
        mu, nu = random_measure(rng, 4, 1), random_measure(rng, 3, 1)
        fast = wasserstein_inf(mu, nu).distance
        slow = wasserstein_inf(mu, nu, metric=lambda x, y: np.abs(x - y.T)).distance
        assert fast == pytest.approx(slow, abs=1e-12)


def test_w1_brute_force_over_vertex_plans():
    # equal uniform weights: optimal plans are permutations
    mu = make_atomic([0.25] * 4, [[0.0], [0.3], [1.1], [2.0]])
    nu = make_atomic([0.25] * 4, [[-0.5], [0.9], [1.0], [3.0]])
    dist = ground_distances(mu, nu)
    best = min(sum(dist[i, j] for i, j in enumerate(perm)) / 4 for perm in itertools.permutations(range(4)))
    assert wasserstein_p(mu, nu, 1.0).distance == pytest.approx(best)


def test_atomic_metric_of_measure_with_itself(three_atoms):
    assert atomic_metric(three_atoms, three_atoms).distance == 0.0


def test_atomic_metric_sees_splitting_atoms():
    n = 100
    mu_n = make_atomic([0.5, 0.5], [[0.0], [1.0 / n]])
    result = atomic_metric(mu_n, dirac([0.0]), eps_grid=[1e-4, 1e-3])
    assert result.wasserstein == pytest.approx(0.5 / n)
    assert result.sup_term == pytest.approx(0.5)
    assert result.distance >= result.wasserstein


def test_atomic_metric_dominates_wasserstein(rng):
    for _ in range(10):
        mu, nu = random_measure(rng, 3, 2), random_measure(rng, 4, 2)
        result = atomic_metric(mu, nu, p=2.0, psi="exp")
        assert result.distance >= result.wasserstein


def test_atomic_metric_near_copies():
    mu = make_atomic([0.25] * 4, [[0.0], [1.0], [2.0], [3.0]])
    nu = make_atomic([0.25] * 4, [[1e-6], [1.0 + 1e-6], [2.0 + 1e-6], [3.0 + 1e-6]])
    result = atomic_metric(mu, nu, eps_grid=[0.1, 0.5])
    assert result.sup_term == pytest.approx(0.0, abs=1e-5)
    assert result.distance == pytest.approx(1e-6, abs=1e-5)


@pytest.mark.parametrize("psi", ["cosine", lambda r: 1.0 + r, lambda r: 0.5 * np.ones_like(r)])
def test_invalid_profiles(psi, three_atoms):
    with pytest.raises(InvalidProfile):
        atomic_metric(three_atoms, three_atoms, psi=psi)


def test_convergence_report_constant_sequence(three_atoms):
    report = atomic_convergence_report([three_atoms] * 3, three_atoms)
    assert report.weight_gaps == [0.0, 0.0, 0.0]
    assert report.converges


def test_convergence_report_splitting_atoms():
    seq = [make_atomic([0.5, 0.5], [[0.0], [1.0 / n]]) for n in range(1, 6)]
    report = atomic_convergence_report(seq, dirac([0.0]))
    assert report.weight_gaps == pytest.approx([1.0] * 5)
    assert not report.converges


def test_weight_gap_for_converging_weights():
    limit = make_atomic([0.5, 0.5], [[0.0], [1.0]])
    for n in (4, 10, 100):
        mu = make_atomic([0.5 + 1.0 / n, 0.5 - 1.0 / n], [[0.0], [1.0]])
        assert weight_gap(mu, limit) == pytest.approx(2.0 / n)
    assert math.isclose(weight_gap(limit, limit), 0.0)
