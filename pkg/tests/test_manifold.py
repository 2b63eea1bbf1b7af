import logging
import math

import numpy as np
import pytest

from atomics.catalog import (
    Affine,
    AffineScalar,
    ClassIndicator,
    Constant,
    Cosine,
    Indicator,
    Product,
    Smoothstep,
    Square,
    Tanh,
)
from atomics.cylinder import FactorizedInner, GenCylinderFn
from atomics.dynamics import integrate_particles
from atomics.errors import InvalidParameter, NonFactorizedInner, NonTangentField, OffSurface, TiedWeights
from atomics.fields import ConstantField
from atomics.manifold import (
    Circle,
    Kuramoto,
    Rotation,
    Sphere2,
    bakry_emery_check,
    circle_heat_check,
    exact_heat_value,
    geodesic_particle_flow,
    get_manifold,
    intrinsic_distance,
    manifold_capacity_audit,
    pushforward_field,
    transport_lifting,
    transport_measure,
)
from atomics.measures import dirac, make_atomic
from atomics.transport import wasserstein_p

COSINE_HEAVY = GenCylinderFn((FactorizedInner(Cosine(), Indicator(0.01, 1.0)),), Affine())


def test_dirac_embeds_on_the_circle():
    assert transport_measure(dirac([0.0]), "circle") == dirac([1.0, 0.0])


def test_distance_equivalence():
    antipodal = intrinsic_distance("circle", [1.0, 0.0], [-1.0, 0.0])
    assert antipodal == pytest.approx(math.pi)
    assert antipodal / 2.0 == pytest.approx(Circle.equivalence_constant)
    quarter = intrinsic_distance("circle", [1.0, 0.0], [0.0, 1.0])
    assert quarter / math.sqrt(2.0) == pytest.approx(math.pi / (2.0 * math.sqrt(2.0)))


def test_chord_never_exceeds_arc(rng):
    sphere = Sphere2()
    x = sphere.embed(rng.uniform(-1.5, 1.5, size=(200, 2)))
    y = sphere.embed(rng.uniform(-1.5, 1.5, size=(200, 2)))
    chord = np.linalg.norm(x - y, axis=1)
    arc = sphere.intrinsic_distance(x, y)
    assert np.all(chord <= arc + 1e-12)
    assert np.all(arc <= sphere.equivalence_constant * chord + 1e-12)


def test_intrinsic_wasserstein_between_antipodes():
    circle = Circle()
    mu = transport_measure(dirac([0.0]), circle)
    nu = transport_measure(dirac([math.pi]), circle)
    assert wasserstein_p(mu, nu, 1.0, metric=circle.metric).distance == pytest.approx(math.pi)
    assert wasserstein_p(mu, nu, 1.0).distance == pytest.approx(2.0)


def test_embed_unembed_round_trip(three_atoms):
    ambient = transport_measure(three_atoms, "circle")
    assert np.allclose(np.linalg.norm(ambient.locations, axis=1), 1.0)
    back = transport_measure(ambient, "circle", "unembed")
    assert back.a.tolist() == three_atoms.a.tolist()
    assert np.allclose(back.locations, three_atoms.locations)
    with pytest.raises(InvalidParameter):
        transport_measure(three_atoms, "circle", "sideways")


def test_sphere_round_trip(rng):
    coords = np.column_stack([rng.uniform(-1.4, 1.4, 6), rng.uniform(-3.0, 3.0, 6)])
    mu = make_atomic(rng.dirichlet(np.ones(6)), coords)
    back = transport_measure(transport_measure(mu, "sphere2"), "sphere2", "unembed")
    assert np.allclose(back.locations, mu.locations)


def test_off_surface_points_are_rejected():
    with pytest.raises(OffSurface):
        Circle().unembed([[2.0, 0.0]])
    with pytest.raises(OffSurface):
        geodesic_particle_flow(dirac([0.0]), Rotation(), 1.0, 0.1, kind="sphere2")
    with pytest.raises(InvalidParameter):
        get_manifold("torus")


def test_rotation_on_the_circle_is_exact(three_atoms):
    mu0 = transport_measure(three_atoms, "circle")
    lam = geodesic_particle_flow(mu0, Rotation(0.7), 1.0, 0.1)
    angles = transport_lifting(lam, "circle", "unembed").positions[-1, :, 0]
    assert np.allclose(angles, three_atoms.locations[:, 0] + 0.7, atol=1e-12)


def test_rotation_on_the_sphere_is_exact(rng):
    coords = np.column_stack([rng.uniform(-1.2, 1.2, 4), rng.uniform(-2.0, 2.0, 4)])
    mu0 = transport_measure(make_atomic(rng.dirichlet(np.ones(4)), coords), "sphere2")
    lam = geodesic_particle_flow(mu0, Rotation(0.5, (0.0, 0.0, 1.0)), 2.0, 0.25)
    start = Sphere2().unembed(mu0.locations)
    expected = Sphere2().embed(np.column_stack([start[:, 0], start[:, 1] + 1.0]))
    assert np.allclose(lam.positions[-1], expected, atol=1e-12)
    assert np.allclose(np.linalg.norm(lam.positions, axis=2), 1.0, atol=1e-12)


def test_kuramoto_flows_agree_across_the_embedding(rng):
    angles = make_atomic(rng.dirichlet(np.ones(5)), rng.uniform(0.0, 2.0 * math.pi, size=(5, 1)))
    b = Kuramoto(omega=0.3, coupling=1.5)
    intrinsic = integrate_particles(angles, b, 1.0, 0.01)
    ambient = geodesic_particle_flow(transport_measure(angles, "circle"), pushforward_field(b), 1.0, 0.01)
    assert np.allclose(transport_lifting(intrinsic, "circle").positions, ambient.positions, atol=1e-9)


def test_normal_fields_are_rejected(three_atoms):
    mu0 = transport_measure(three_atoms, "circle")
    with pytest.raises(NonTangentField):
        geodesic_particle_flow(mu0, ConstantField((1.0, 0.0)), 1.0, 0.1)


def test_heat_at_time_zero(three_atoms):
    report = circle_heat_check(COSINE_HEAVY, three_atoms, 0.0, 200, 0)
    assert report.mc_value == pytest.approx(report.initial)
    assert report.exact == pytest.approx(report.initial)
    assert report.agrees


@pytest.mark.parametrize("t", [1e-3, 0.1, 1.0])
def test_exact_heat_value_for_cosine(three_atoms, t):
    a, theta = three_atoms.a, three_atoms.locations[:, 0]
    expected = math.fsum(a * np.exp(-t / a) * np.cos(theta))
    assert exact_heat_value(COSINE_HEAVY, three_atoms, t) == pytest.approx(expected, abs=1e-10)


def test_heat_monte_carlo_matches_exact(three_atoms):
    report = circle_heat_check(COSINE_HEAVY, three_atoms, 0.1, 20000, 1)
    assert report.separable
    assert abs(report.mc_value - report.exact) <= 4.0 * report.mc_se


def test_heat_accepts_embedded_measures(three_atoms):
    direct = exact_heat_value(COSINE_HEAVY, three_atoms, 0.2)
    embedded = exact_heat_value(COSINE_HEAVY, transport_measure(three_atoms, "circle"), 0.2)
    assert embedded == pytest.approx(direct, abs=1e-12)


def test_heat_needs_distinct_weights():
    tied = make_atomic([0.5, 0.5], [[0.0], [1.0]])
    with pytest.raises(TiedWeights):
        circle_heat_check(COSINE_HEAVY, tied, 0.1, 100, 0)


def test_non_separable_heat_is_monte_carlo_only(three_atoms):
    F = GenCylinderFn((FactorizedInner(Cosine(), Smoothstep(0.1, 0.6)),), Square())
    report = circle_heat_check(F, three_atoms, 0.1, 500, 2)
    assert report.exact is None
    assert report.agrees is None
    assert not report.separable
    with pytest.raises(NonFactorizedInner):
        exact_heat_value(F, three_atoms, 0.1)
    with pytest.raises(NonFactorizedInner):
        bakry_emery_check(F, three_atoms, 0.1)


def test_bakry_emery_inequality(three_atoms):
    report = bakry_emery_check(COSINE_HEAVY, three_atoms, 0.1, n_mc=5000, seed=3)
    assert report.holds
    assert abs(report.mc_value - report.semigroup_of_gradient) <= 4.0 * report.mc_se + 1e-9
    at_zero = bakry_emery_check(COSINE_HEAVY, three_atoms, 0.0, n_mc=100)
    assert at_zero.gradient_of_semigroup == pytest.approx(at_zero.semigroup_of_gradient)


def test_capacity_audit_skips_eps_without_a_log_cutoff(caplog):
    with caplog.at_level(logging.WARNING, logger="atomics.manifold"):
        audit = manifold_capacity_audit("circle", 2.0, (4.0, 1.5, 1e-2), n_samples=20000)
    assert audit.skipped == [4.0, 1.5]
    assert [row.eps for row in audit.rows] == [1e-2]
    row = audit.rows[0]
    assert 0.0 < row.value < math.inf
    assert row.stderr > 0.0
    assert "Skipping eps=4.0" in caplog.text
    with pytest.raises(InvalidParameter):
        manifold_capacity_audit("circle", 2.0, (2.0, 1.0), n_samples=20000)


@pytest.mark.slow
def test_sphere_capacity_decays():
    audit = manifold_capacity_audit("sphere2", 2.0, (1e-2, 1e-4, 1e-6))
    assert audit.passed
    assert audit.decreasing
    assert audit.fitted_exponent == pytest.approx(-1.0, abs=0.2)


SEPARABLE = (
    COSINE_HEAVY,
    GenCylinderFn((FactorizedInner(Cosine(2.0, 0.4), Smoothstep(0.05, 0.35)),), Affine((1.5,), -0.2)),
    GenCylinderFn((FactorizedInner(Cosine(1.0, 0.5 * math.pi), Tanh(3.0, a_min=0.05)),
                   FactorizedInner(Cosine(3.0, 1.0), Indicator(0.2, 1.0))), Affine((1.0, -0.5), 0.3)),
    GenCylinderFn((FactorizedInner(Product((Cosine(1.0), Cosine(2.0, 0.3))), AffineScalar(a_min=0.1)),), Affine()),
    GenCylinderFn((FactorizedInner(Constant(1.0), ClassIndicator(0.3)),
                   FactorizedInner(Cosine(1.0, 1.2), Indicator(0.1, 0.4))), Affine((0.5, 2.0))),
)
STRICT_MEASURES = (
    make_atomic([0.5, 0.3, 0.2], [[0.0], [1.0], [2.5]]),
    make_atomic([0.6, 0.25, 0.1, 0.05], [[0.3], [2.0], [4.0], [5.5]]),
    make_atomic([0.45, 0.3, 0.15, 0.07, 0.03], [[1.0], [1.7], [3.1], [4.4], [6.0]]),
)


@pytest.mark.slow
@pytest.mark.parametrize("t", [0.05, 0.2])
@pytest.mark.parametrize("m", range(len(STRICT_MEASURES)))
@pytest.mark.parametrize("f", range(len(SEPARABLE)))
def test_heat_identity_on_separable_functionals(f, m, t):
    report = circle_heat_check(SEPARABLE[f], STRICT_MEASURES[m], t, 10 ** 5, 100 + 10 * f + m)
    assert report.separable
    assert abs(report.mc_value - report.exact) <= 3.0 * report.mc_se + 1e-6
