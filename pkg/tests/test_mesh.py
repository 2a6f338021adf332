import numpy as np
import pytest

from neumann_renorm.errors import InvalidDomainError, InvalidFieldError, InvalidParameterError, NumericError
from neumann_renorm.mesh import (
    DiscreteField,
    Mesh,
    build_mesh,
    field_interpolator,
    integrate,
    parse_domain,
    quadrature_rule,
    read_snapshot,
    sample_values,
    write_snapshot,
)


def test_interval_mesh_measures():
    mesh = build_mesh('interval(0, 2)', 8)
    assert mesh.dimension == 1
    assert mesh.n_nodes == 9
    assert mesh.n_elements == 8
    assert mesh.total_measure == pytest.approx(2.0)
    np.testing.assert_allclose(mesh.element_measures, 0.25)
    assert mesh.node_measures.sum() == pytest.approx(2.0)
    assert mesh.node_measures[0] == pytest.approx(0.125)


def test_square_mesh_layout(mesh_2d):
    assert mesh_2d.n_nodes == 49
    assert mesh_2d.n_elements == 72
    assert mesh_2d.total_measure == pytest.approx(1.0)
    assert np.all(mesh_2d.element_measures > 0.0)
    assert mesh_2d.diameter == pytest.approx(np.sqrt(2.0))
    assert mesh_2d.tag == '2d-49n-72e'


def test_basis_gradients_sum_to_zero(mesh_2d):
    np.testing.assert_allclose(mesh_2d.basis_gradients.sum(axis=1), 0.0, atol=1e-12)


def test_gradient_of_linear_field_is_exact(mesh_2d):
    field = DiscreteField.sample(mesh_2d, lambda x: 2.0 * x[:, 0] - 3.0 * x[:, 1] + 1.0)
    np.testing.assert_allclose(field.gradients(), np.tile([2.0, -3.0], (mesh_2d.n_elements, 1)), atol=1e-12)
    assert field.integral() == pytest.approx(0.5)


def test_orientation_is_fixed():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    mesh = Mesh.from_arrays(nodes, [[0, 2, 1]])
    assert mesh.element_measures[0] == pytest.approx(0.5)


@pytest.mark.parametrize('nodes, elements', [
    ([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [[0, 1, 2]]),
    ([[0.0], [1.0], [1.0]], [[0, 1], [1, 2]]),
])
def test_degenerate_elements_rejected(nodes, elements):
    with pytest.raises(InvalidDomainError):
        Mesh.from_arrays(np.array(nodes), elements)


def test_disconnected_mesh_rejected():
    nodes = np.array([[0.0], [1.0], [2.0], [3.0]])
    with pytest.raises(InvalidDomainError, match='not connected'):
        Mesh.from_arrays(nodes, [[0, 1], [2, 3]])


@pytest.mark.parametrize('text', ['interval(1, 1)', 'disc', 'interval(a, 2)'])
def test_bad_domains(text):
    with pytest.raises(InvalidDomainError):
        build_mesh(text, 4)


def test_domain_text_round_trip():
    assert str(parse_domain('interval(0, 1)')) == 'interval(0.0, 1.0)'
    assert str(parse_domain(' unit_square ')) == 'unit_square'


@pytest.mark.parametrize('order', [1, 2, 3, 4, 5, 7])
def test_triangle_quadrature_is_exact(order):
    rule = quadrature_rule(2, order)
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    mesh = build_mesh('unit_square', 3)
    for a in range(order + 1):
        b = order - a
        value = integrate(mesh, lambda x: x[:, 0] ** a * x[:, 1] ** b, order)
        assert value == pytest.approx(1.0 / ((a + 1) * (b + 1)), rel=1e-12)


def test_default_triangle_rule_has_six_points():
    assert quadrature_rule(2, 4).size == 6


def test_interval_quadrature_is_exact():
    mesh = build_mesh('interval(0, 1)', 5)
    for degree in range(8):
        assert integrate(mesh, lambda x: x[:, 0] ** degree, 7) == pytest.approx(1.0 / (degree + 1), rel=1e-12)


def test_quadrature_order_must_be_positive():
    with pytest.raises(InvalidParameterError):
        quadrature_rule(1, 0)


def test_integrate_reports_element_of_non_finite_value():
    mesh = build_mesh('interval(0, 1)', 4)
    with pytest.raises(NumericError) as info:
        integrate(mesh, lambda x: np.where(x[:, 0] > 0.8, np.nan, 1.0))
    assert info.value.element == 3


def test_field_validation(mesh_1d):
    with pytest.raises(InvalidFieldError):
        DiscreteField(mesh_1d, np.zeros(3))
    values = np.zeros(mesh_1d.n_nodes)
    values[4] = np.inf
    with pytest.raises(InvalidFieldError, match='node 4'):
        DiscreteField(mesh_1d, values)


def test_field_values_are_read_only(mesh_1d):
    field = DiscreteField.constant(mesh_1d, 1.0)
    with pytest.raises(ValueError):
        field.nodal_values[0] = 2.0


def test_interpolator_reproduces_linear_fields(mesh_2d):
    field = DiscreteField.sample(mesh_2d, lambda x: x[:, 0] + 2.0 * x[:, 1])
    evaluate = field_interpolator(field)
    points = np.array([[0.1, 0.2], [0.55, 0.35], [1.0, 1.0]])
    np.testing.assert_allclose(evaluate(points), points[:, 0] + 2.0 * points[:, 1], atol=1e-12)


def test_snapshot_round_trip(tmp_path, mesh_2d):
    field = DiscreteField.sample(mesh_2d, lambda x: np.sin(3.0 * x[:, 0]) + x[:, 1] / 3.0)
    path = write_snapshot(tmp_path / 'field.snap', mesh_2d, field)
    mesh, restored = read_snapshot(path)
    np.testing.assert_array_equal(mesh.nodes, mesh_2d.nodes)
    np.testing.assert_array_equal(mesh.elements, mesh_2d.elements)
    np.testing.assert_array_equal(restored.nodal_values, field.nodal_values)


def test_snapshot_without_values(tmp_path, mesh_1d):
    mesh, field = read_snapshot(write_snapshot(tmp_path / 'mesh.snap', mesh_1d))
    assert field is None
    assert mesh.n_nodes == mesh_1d.n_nodes


def test_snapshot_header_checked(tmp_path):
    path = tmp_path / 'bad.snap'
    path.write_text('something else\n', encoding='utf-8')
    with pytest.raises(InvalidFieldError):
        read_snapshot(path)


def test_field_arithmetic(mesh_1d):
    a = sample_values(mesh_1d, np.arange(mesh_1d.n_nodes, dtype=float))
    b = a.scaled(2.0) - a
    np.testing.assert_array_equal(b.nodal_values, a.nodal_values)
    assert (a + a.shifted(1.0)).nodal_values[0] == 1.0
