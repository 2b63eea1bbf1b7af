import math

import numpy as np
import pytest

from atomics.errors import ConfigParse, InvalidBase, InvalidParameter
from atomics.measures import total_mass
from atomics.sampling import (
    BaseLaw,
    RandomMeasureLaw,
    WeightLaw,
    estimate_barycenter_coeffs,
    mean_and_se,
    monte_carlo,
    parse_base,
    parse_law,
    poisson_count_gof,
    sample_measure,
    sample_sticks,
    sample_weights,
    stream,
    verify_barycenter_identity,
)


def test_streams_are_keyed_by_label_and_index():
    a = stream(7, "weights").random(4)
    assert np.array_equal(a, stream(7, "weights").random(4))
    assert not np.array_equal(a, stream(7, "locations").random(4))
    assert not np.array_equal(stream(7, "block", 0).random(4), stream(7, "block", 1).random(4))


def test_parse_law_forms():
    law = parse_law("stick_breaking:2@gaussian:2")
    assert law.weight_law.beta == 2.0
    assert law.base_law.kind == "gaussian" and law.dim == 2
    assert parse_law("poisson:1").weight_law.lam == 1.0
    assert parse_law("uniform:4@uniform_circle").weight_law.weights == (0.25,) * 4
    assert parse_law("fixed:0.2,0.5,0.3").weight_law.weights == (0.5, 0.3, 0.2)
    json_law = parse_law('{"weight_law": {"kind": "poisson", "lam": 3}, "base_law": {"kind": "uniform_sphere"}}')
    assert json_law.dim == 3


@pytest.mark.parametrize("text", ["poisson", "gamma:1", "fixed:a,b", "{not json"])
def test_parse_law_rejects(text):
    with pytest.raises(ConfigParse):
        parse_law(text)


def test_parse_base():
    base = parse_base("uniform_box:3")
    assert base.dim == 3 and base.low == (0.0, 0.0, 0.0)
    with pytest.raises(InvalidBase):
        parse_base("torus:2")


@pytest.mark.parametrize("kwargs", [
    {"kind": "stick_breaking", "beta": 0.0},
    {"kind": "poisson", "lam": -1.0},
    {"kind": "dirichlet"},
])
def test_weight_law_validation(kwargs):
    with pytest.raises(InvalidParameter):
        WeightLaw(**kwargs)


def test_truncation_range():
    with pytest.raises(InvalidParameter):
        RandomMeasureLaw(WeightLaw("poisson", lam=1.0), truncation=0.1)


def test_fixed_single_weight():
    ws = sample_weights(RandomMeasureLaw(WeightLaw("fixed", weights=(1.0,))), 0)
    assert ws.weights.tolist() == [1.0]


def test_poisson_weights_are_uniform():
    law = parse_law("poisson:2")
    for seed in range(20):
        ws = sample_weights(law, seed)
        n = len(ws)
        assert np.all(ws.weights == 1.0 / n)


def test_stick_breaking_mass_and_tail():
    law = RandomMeasureLaw(WeightLaw("stick_breaking", beta=2.0), truncation=1e-6)
    for seed in range(10):
        mu = sample_measure(law, seed)
        assert mu.n_atoms >= 1
        assert mu.tail_mass < 1e-6
        assert total_mass(mu) == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(mu.a) <= 0.0)


def test_absorbed_tail_gives_probability_measure():
    law = RandomMeasureLaw(WeightLaw("stick_breaking", beta=1.0), absorb_tail=True)
    mu = sample_measure(law, 3)
    assert mu.tail_mass == 0.0
    assert math.fsum(mu.a) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.slow
def test_first_stick_mean():
    law = RandomMeasureLaw(WeightLaw("stick_breaking", beta=1.0), truncation=1e-2)
    firsts = monte_carlo(10 ** 5, 11, "first_stick", lambda rng, m: [sample_sticks(law, rng)[0][0] for _ in range(m)])
    mean, se = mean_and_se(firsts)
    assert abs(mean - 0.5) <= 3.0 * se


def test_sample_measure_is_reproducible():
    law = parse_law("stick_breaking:1.5@uniform_box:2")
    assert sample_measure(law, 99) == sample_measure(law, 99)
    assert sample_measure(law, 99) != sample_measure(law, 100)


def test_uniform_law_in_box():
    law = parse_law("uniform:5@uniform_box:2")
    mu = sample_measure(law, 1)
    assert mu.n_atoms == 5
    assert np.all(mu.a == 0.2)
    assert np.all((mu.locations >= 0.0) & (mu.locations <= 1.0))


def test_circle_and_sphere_bases_lie_on_the_surface():
    for text, dim in (("uniform:6@uniform_circle", 2), ("uniform:6@uniform_sphere", 3)):
        mu = sample_measure(parse_law(text), 5)
        assert mu.dim == dim
        assert np.allclose(np.linalg.norm(mu.locations, axis=1), 1.0)


def test_monte_carlo_is_independent_of_threads():
    def block(rng, m):
        return rng.normal(size=m)

    serial = monte_carlo(4321, 8, "threads", block, threads=1)
    parallel = monte_carlo(4321, 8, "threads", block, threads=4)
    assert serial.shape == (4321,)
    assert np.array_equal(serial, parallel)


def test_barycenter_coefficients_fixed_laws():
    uniform4 = estimate_barycenter_coeffs(parse_law("uniform:4"), 200, 0)
    assert uniform4.c1 == pytest.approx(0.75)
    assert uniform4.c2 == pytest.approx(0.25)
    single = estimate_barycenter_coeffs(parse_law("fixed:1"), 200, 0)
    assert (single.c1, single.c2) == (0.0, 1.0)
    with pytest.raises(InvalidParameter):
        estimate_barycenter_coeffs(parse_law("fixed:1"), 10, 0)


def test_barycenter_coefficients_stick_breaking():
    beta = 2.0
    coeffs = estimate_barycenter_coeffs(parse_law(f"stick_breaking:{beta}"), 20000, 4)
    assert abs(coeffs.c2 - 1.0 / (1.0 + beta)) <= 3.0 * coeffs.c2_se + 1e-4
    assert abs(coeffs.c1 + coeffs.c2 - 1.0) <= 3.0 * math.hypot(coeffs.c1_se, coeffs.c2_se) + 1e-5


def test_barycenter_identity_constant_function():
    report = verify_barycenter_identity(parse_law("poisson:1"), lambda x, y: np.ones(x.shape[0]), 1000, 2)
    assert report.second_order.lhs == pytest.approx(1.0)
    assert report.second_order.rhs == pytest.approx(1.0)
    assert report.first_order.passed and report.second_order.passed


def test_barycenter_identity_diagonal_indicator():
    law = parse_law("stick_breaking:1")

    def same(x, y):
        return np.all(x == y, axis=1).astype(float)

    report = verify_barycenter_identity(law, same, 2000, 6)
    assert report.second_order.lhs == pytest.approx(report.coefficients.c2, rel=0.05)
    assert report.second_order.passed


def test_barycenter_identity_dot_product():
    law = parse_law("uniform:2@uniform_box:1")
    report = verify_barycenter_identity(law, lambda x, y: x[:, 0] * y[:, 0], 20000, 3)
    assert report.coefficients.c1 == 0.5 and report.coefficients.c2 == 0.5
    assert report.second_order.rhs == pytest.approx(7.0 / 24.0, abs=0.01)
    assert report.second_order.passed


def test_first_order_identity_for_random_functions(rng):
    law = parse_law("stick_breaking:2@gaussian:1")
    for k in range(10):
        freq, phase = rng.uniform(0.5, 3.0), rng.uniform(0.0, math.pi)

        def f(x, freq=freq, phase=phase):
            return np.cos(freq * x[:, 0] + phase)

        report = verify_barycenter_identity(law, lambda x, y: f(x) * f(y), 1000, 40 + k, f=f)
        assert report.first_order.z <= 4.0


@pytest.mark.slow
def test_poisson_atom_counts():
    assert poisson_count_gof(parse_law("poisson:1"), 10 ** 4, 17) > 0.01


def test_base_law_density():
    box = BaseLaw("uniform_box", 2, low=(0.0, 0.0), high=(2.0, 1.0))
    assert box.density_sup == 0.5
    assert box.density(np.array([[1.0, 0.5], [3.0, 0.5]])).tolist() == [0.5, 0.0]
    with pytest.raises(InvalidBase):
        BaseLaw("uniform_sphere").density_sup
