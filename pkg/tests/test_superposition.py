import math

import numpy as np
import pytest

from atomics.dynamics import Lifting, evolve_ensemble, integrate_particles
from atomics.errors import DegenerateLaw, GridMismatch, InvalidParameter, SpectrumRejected
from atomics.cylinder import F_a
from atomics.fields import ConstantField, GaussianInteraction, LinearDecay, MeanFieldAttraction
from atomics.measures import MeasureCurve, dirac, make_atomic
from atomics.sampling import parse_law, sample_measure, stream
from atomics.superposition import (
    poisson_F_a_moments,
    reconstruct,
    reconstruct_lifting,
    sobolev_counterexample,
    verify_lifting,
    weight_spectrum_audit,
)


@pytest.fixture
def square():
    """Four atoms of weight 1/4 on the unit square."""
    return make_atomic([0.25] * 4, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])


def test_audit_accepts_flowed_curve(three_atoms):
    curve = integrate_particles(three_atoms, MeanFieldAttraction(), 1.0, 0.1).curve()
    decomposition = weight_spectrum_audit(curve)
    assert decomposition.accepted
    assert [c.weight for c in decomposition.classes] == [0.5, 0.3, 0.2]
    assert [c.size for c in decomposition.classes] == [1, 1, 1]
    assert decomposition.total_mass == pytest.approx(1.0)


def test_audit_groups_equal_weights(square):
    curve = MeasureCurve([0.0, 1.0], (square, square))
    decomposition = weight_spectrum_audit(curve)
    assert len(decomposition.classes) == 1
    assert decomposition.classes[0].size == 4
    assert len(decomposition.classes[0].members) == 2


def test_audit_rejects_splitting_atom():
    curve = MeasureCurve([0.0, 0.5, 1.0], (dirac([0.0]), dirac([0.0]), make_atomic([0.5, 0.5], [[0.0], [0.1]])))
    decomposition = weight_spectrum_audit(curve)
    assert not decomposition.accepted
    rejection = decomposition.rejection
    assert (rejection.t_before, rejection.t_after) == (0.5, 1.0)
    assert (rejection.atoms_before, rejection.atoms_after) == (1, 2)
    with pytest.raises(SpectrumRejected):
        reconstruct(curve)


def test_audit_rejects_moving_weights():
    curve = MeasureCurve([0.0, 1.0], (make_atomic([0.6, 0.4], [[0.0], [1.0]]),
                                       make_atomic([0.7, 0.3], [[0.0], [1.0]])))
    assert weight_spectrum_audit(curve).rejection.weight == 0.6


def test_audit_tolerance_must_be_positive(three_atoms):
    with pytest.raises(InvalidParameter):
        weight_spectrum_audit(MeasureCurve([0.0], (three_atoms,)), tol=0.0)


def test_reconstruct_recovers_translation(square):
    b = ConstantField((0.05, 0.02))
    original = integrate_particles(square, b, 1.0, 0.1)
    result = reconstruct(original.curve())
    assert result.ambiguous_nodes == ()
    assert np.allclose(result.lifting.positions, original.positions)
    guided = reconstruct_lifting(original.curve(), b)
    assert np.allclose(guided.positions, original.positions)


def test_reconstruct_then_verify(rng):
    mu0 = make_atomic([0.4, 0.2, 0.2, 0.1, 0.1], rng.normal(size=(5, 2)))
    b = MeanFieldAttraction(0.5)
    curve = integrate_particles(mu0, b, 1.0, 0.05).curve()
    lam = reconstruct_lifting(curve, b)
    report = verify_lifting(lam, curve, b)
    assert report.max_marginal_error == 0.0
    assert report.max_ode_residual < 0.1


def test_verify_exact_translation(square):
    b = ConstantField((1.0, 0.0))
    lam = integrate_particles(square, b, 1.0, 0.25)
    report = verify_lifting(lam, lam.curve(), b)
    assert report.marginal_errors == (0.0,) * 5
    assert report.max_ode_residual == pytest.approx(0.0, abs=1e-9)
    assert verify_lifting(lam, lam.curve()).ode_residuals is None


def test_relabeling_within_a_class_keeps_marginals(square):
    lam = integrate_particles(square, ConstantField((0.0, 1.0)), 1.0, 0.5)
    swapped = np.array(lam.positions)
    swapped[:, [0, 3]] = swapped[:, [3, 0]]
    report = verify_lifting(Lifting(lam.weights, lam.times, swapped), lam.curve())
    assert report.max_marginal_error == 0.0


def test_verify_needs_common_grid(square):
    lam = integrate_particles(square, ConstantField((1.0, 0.0)), 1.0, 0.25)
    other = integrate_particles(square, ConstantField((1.0, 0.0)), 1.0, 0.5).curve()
    with pytest.raises(GridMismatch):
        verify_lifting(lam, other)


def test_poisson_moments():
    mean, variance = poisson_F_a_moments(1.0, 1.0)
    assert mean == pytest.approx(math.exp(-1.0))
    assert variance == pytest.approx(math.exp(-1.0) * (1.0 - math.exp(-1.0)))
    mean, variance = poisson_F_a_moments(1.0, 0.5)
    assert mean == pytest.approx(3.0 * math.exp(-1.0))
    assert variance == pytest.approx(5.0 * math.exp(-1.0) - 9.0 * math.exp(-2.0))


def test_counting_functional_defeats_poincare():
    law = parse_law("poisson:1@uniform_box:1")
    _, liftings = evolve_ensemble(law, MeanFieldAttraction(), 3, 0.5, 0.1, seed=2)
    report = sobolev_counterexample(law, 0.5, liftings, 4000, 5)
    expected_mean, expected_var = poisson_F_a_moments(1.0, 0.5)
    assert report.constant_along_liftings
    assert report.gradient_energy == 0.0
    assert abs(report.mean - expected_mean) <= 4.0 * report.mean_se
    assert report.variance == pytest.approx(expected_var, rel=0.15)
    assert not report.degenerate
    assert report.poincare_violated


def test_dirac_weight_law_is_degenerate():
    law = parse_law("fixed:1")
    _, liftings = evolve_ensemble(law, MeanFieldAttraction(), 2, 0.5, 0.1, seed=0)
    report = sobolev_counterexample(law, 0.5, liftings, 200, 1)
    assert report.degenerate
    assert not report.poincare_violated
    with pytest.raises(DegenerateLaw):
        sobolev_counterexample(law, 0.5, liftings, 200, 1, strict=True)


SMOOTH_FIELDS = (LinearDecay(1.0), MeanFieldAttraction(1.0), GaussianInteraction(0.5, 0.5), ConstantField((0.3, -0.2)))
STICKS = parse_law("stick_breaking:2@uniform_box:2")


def _scenario(index: int):
    return sample_measure(STICKS, stream(11, "scenario", index)), SMOOTH_FIELDS[index % len(SMOOTH_FIELDS)]


@pytest.mark.slow
@pytest.mark.parametrize("index", range(50))
def test_reconstruction_round_trip(index):
    mu0, b = _scenario(index)
    dt = 1e-3
    original = integrate_particles(mu0, b, 1.0, dt)
    curve = original.curve()
    lam = reconstruct_lifting(curve, b)
    report = verify_lifting(lam, curve, b)
    assert report.max_marginal_error == 0.0
    assert report.max_ode_residual <= 5.0 * dt * b.lipschitz + 1e-9
    if np.unique(mu0.a).size == mu0.n_atoms:
        assert np.abs(lam.positions - original.positions).max() < 1e-10


@pytest.mark.parametrize("index", range(6))
def test_field_prediction_lowers_the_matching_cost(index):
    mu0, _ = _scenario(index)
    b = (LinearDecay(0.8), MeanFieldAttraction(1.5), ConstantField((0.5, 0.5)))[index % 3]
    curve = integrate_particles(mu0, b, 0.5, 0.01).curve()
    guided = reconstruct(curve, b)
    blind = reconstruct(curve)
    assert guided.total_cost <= blind.total_cost
    assert np.array_equal(guided.lifting.positions, blind.lifting.positions)


@pytest.mark.parametrize("index", range(6))
def test_reconstructed_liftings_pass_the_spectrum_audit(index):
    mu0, b = _scenario(index)
    curve = integrate_particles(mu0, b, 0.5, 0.02).curve()
    source = weight_spectrum_audit(curve)
    audit = weight_spectrum_audit(reconstruct_lifting(curve, b).curve())
    assert audit.accepted
    assert [(c.weight, c.size) for c in audit.classes] == [(c.weight, c.size) for c in source.classes]


@pytest.mark.slow
def test_counting_functional_on_a_large_ensemble():
    law = parse_law("poisson:1@uniform_box:1")
    _, liftings = evolve_ensemble(law, MeanFieldAttraction(), 200, 0.5, 0.05, seed=4)
    for lam in liftings.members:
        values = {F_a(lam.marginal(k), 0.3) for k in range(len(lam))}
        assert len(values) == 1
    report = sobolev_counterexample(law, 0.3, liftings, 20000, 8)
    # N = 1 + Poisson(1) atoms of weight 1/N, counted when N <= 3
    expected_var = 9.5 * math.exp(-1.0) - 20.25 * math.exp(-2.0)
    assert poisson_F_a_moments(1.0, 0.3)[1] == pytest.approx(expected_var)
    assert report.constant_along_liftings
    assert abs(report.variance - expected_var) <= 3.0 * report.variance_se
    assert report.variance > 0.0
    assert report.poincare_violated
