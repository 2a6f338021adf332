import math

import numpy as np
import pytest

from neumann_renorm.calculus import (
    cutoff,
    distribution_measure,
    lp_norm,
    median,
    median_node,
    nodal_gap,
    poincare_ratio,
    psi_transform,
    psi_transform_field,
    truncate,
    truncate_field,
    w1p_distance,
    w1p_norm,
    w1p_seminorm,
    weighted_median,
)
from neumann_renorm.errors import InvalidParameterError
from neumann_renorm.mesh import DiscreteField, build_mesh, sample_values


def test_truncate_scalar_and_array():
    assert truncate(3.0, 2.0) == 2.0
    assert truncate(-3.0, 2.0) == -2.0
    assert truncate(0.5, 2.0) == 0.5
    np.testing.assert_array_equal(truncate(np.array([-5.0, 0.0, 5.0]), 1.0), [-1.0, 0.0, 1.0])
    assert truncate(7.0, 0.0) == 0.0
    with pytest.raises(InvalidParameterError):
        truncate(1.0, -1.0)


def test_truncation_composes_to_the_smaller_level():
    rng = np.random.default_rng(0)
    s = rng.normal(scale=10.0, size=1000)
    k = rng.uniform(0.0, 20.0, size=1000)
    m = rng.uniform(0.0, 20.0, size=1000)
    for si, ki, mi in zip(s, k, m):
        assert truncate(truncate(si, mi), ki) == truncate(si, min(ki, mi))


def test_truncate_field_is_nodal_clamp(mesh_1d):
    field = DiscreteField.sample(mesh_1d, lambda x: 4.0 * x[:, 0] - 2.0)
    clamped = truncate_field(field, 1.0)
    assert clamped.nodal_values.max() == 1.0
    assert clamped.nodal_values.min() == -1.0


def test_cutoff_profile():
    np.testing.assert_allclose(cutoff(np.array([0.0, 1.0, 1.5, 2.0, 3.0, -1.5]), 1.0), [1.0, 1.0, 0.5, 0.0, 0.0, 0.5])
    assert cutoff(0.0, 2.0) == 1.0
    with pytest.raises(InvalidParameterError):
        cutoff(1.0, 0.0)


def test_weighted_median_conventions():
    values = np.array([-1.0, 0.0, 2.0, 3.0])
    weights = np.ones(4)
    assert weighted_median(values, weights) == 2.0
    assert weighted_median(values, weights, strict=True) == 0.0


def test_weighted_median_respects_weights():
    values = np.array([5.0, 1.0, 3.0])
    assert weighted_median(values, np.array([1.0, 1.0, 10.0])) == 3.0
    assert weighted_median(values, np.array([10.0, 1.0, 1.0])) == 5.0
    assert weighted_median(np.array([7.0]), np.array([2.0])) == 7.0


def test_weighted_median_of_empty_set():
    with pytest.raises(InvalidParameterError):
        weighted_median(np.array([]), np.array([]))


def test_median_of_odd_field(mesh_1d):
    field = DiscreteField.sample(mesh_1d, lambda x: np.cos(math.pi * x[:, 0]))
    assert abs(median(field)) <= 1e-12
    node = median_node(field)
    assert field.nodal_values[node] == median(field)
    assert nodal_gap(field) > 0.0


def test_nodal_gap():
    mesh = build_mesh('interval(0, 1)', 3)
    assert nodal_gap(sample_values(mesh, [0.0, 0.1, 0.5, 0.6])) == pytest.approx(0.4)
    assert nodal_gap(DiscreteField.constant(mesh, 2.0)) == 0.0


def test_norms_of_linear_field():
    mesh = build_mesh('interval(0, 1)', 8)
    field = DiscreteField.sample(mesh, lambda x: x[:, 0])
    assert lp_norm(field, 2.0) == pytest.approx(math.sqrt(1.0 / 3.0), rel=1e-12)
    assert lp_norm(field, 1.0) == pytest.approx(0.5, rel=1e-12)
    assert lp_norm(field, math.inf) == 1.0
    assert w1p_seminorm(field, 3.0) == pytest.approx(1.0, rel=1e-12)
    assert w1p_norm(field, 2.0) == pytest.approx(math.sqrt(1.0 / 3.0 + 1.0), rel=1e-12)
    assert w1p_distance(field, field, 2.0) == 0.0
    with pytest.raises(InvalidParameterError):
        lp_norm(field, 0.5)


def test_distribution_measure_exact_1d():
    mesh = build_mesh('interval(0, 1)', 10)
    field = DiscreteField.sample(mesh, lambda x: 2.0 * x[:, 0] - 1.0)
    assert distribution_measure(field, 0.3) == pytest.approx(0.7, rel=1e-12)
    assert distribution_measure(field, 0.0) == pytest.approx(1.0, rel=1e-12)
    assert distribution_measure(field, 1.0) == 0.0


def test_distribution_measure_methods_agree_in_2d():
    mesh = build_mesh('unit_square', 24)
    field = DiscreteField.sample(mesh, lambda x: x[:, 0] + x[:, 1] - 1.0)
    exact = distribution_measure(field, 0.5, method='exact')
    # {|x + y - 1| > 1/2} consists of two corner triangles of area 1/8 each
    assert exact == pytest.approx(0.25, rel=1e-10)
    assert distribution_measure(field, 0.5) == pytest.approx(exact, abs=0.05)


def test_distribution_measure_rejects_bad_arguments(mesh_1d):
    field = DiscreteField.constant(mesh_1d, 1.0)
    with pytest.raises(InvalidParameterError):
        distribution_measure(field, -1.0)
    with pytest.raises(InvalidParameterError):
        distribution_measure(field, 1.0, method='monte-carlo')


def test_psi_transform_is_bounded():
    r = np.linspace(-1e6, 1e6, 2001)
    for p in (1.2, 1.6, 2.0, 3.0):
        values = psi_transform(r, p)
        assert np.all(np.abs(values) <= 1.0 / (p - 1.0))
    assert psi_transform(0.0, 2.0) == 0.0
    assert psi_transform(1.0, 2.0) == pytest.approx(0.5)
    assert psi_transform(math.e - 1.0, 1.0) == pytest.approx(1.0)


@pytest.mark.parametrize('p', [1.0, 1.6, 2.0, 3.0])
@pytest.mark.parametrize('r', [-2.0, 0.3, 5.0])
def test_psi_transform_is_odd_increasing_with_known_derivative(p, r):
    h = 1e-6
    assert psi_transform(-r, p) == -psi_transform(r, p)
    assert psi_transform(r - h, p) < psi_transform(r, p) < psi_transform(r + h, p)
    derivative = (psi_transform(r + h, p) - psi_transform(r - h, p)) / (2.0 * h)
    assert derivative == pytest.approx((1.0 + abs(r)) ** -p, rel=1e-6)


@pytest.mark.parametrize('method', ['exact', 'quadrature'])
def test_distribution_measure_is_nonincreasing_in_2d(method):
    mesh = build_mesh('unit_square', 16)
    field = DiscreteField.sample(mesh, lambda x: np.sin(3.0 * x[:, 0]) * np.cos(2.0 * x[:, 1]) + x[:, 1] - 0.5)
    levels = np.linspace(0.0, 1.6, 33)
    measures = [distribution_measure(field, t, method=method) for t in levels]
    assert measures[0] <= 1.0 + 1e-12
    assert all(b <= a for a, b in zip(measures, measures[1:]))
    assert measures[-1] == 0.0


def test_psi_transform_field(mesh_1d):
    field = DiscreteField.constant(mesh_1d, 1.0)
    np.testing.assert_allclose(psi_transform_field(field, 2.0).nodal_values, 0.5)


def test_poincare_ratio():
    mesh = build_mesh('interval(0, 1)', 32)
    assert poincare_ratio(DiscreteField.constant(mesh, 3.0), 2.0) == 0.0
    ratio = poincare_ratio(DiscreteField.sample(mesh, lambda x: np.cos(math.pi * x[:, 0])), 2.0)
    assert ratio == pytest.approx(1.0 / math.pi, rel=1e-2)
