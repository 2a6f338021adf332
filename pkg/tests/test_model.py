import math

import numpy as np
import pytest

from neumann_renorm import create_operator
from neumann_renorm.calculus import lp_norm
from neumann_renorm.data import bump, dipole
from neumann_renorm.errors import InvalidFieldError, InvalidParameterError
from neumann_renorm.mesh import DiscreteField, build_mesh
from neumann_renorm.model import (
    OperatorSpec,
    SampleGrid,
    default_q_exponent,
    make_prototype,
    prepare_datum,
    project_datum,
    regularize,
    smoothed_kernel,
    smoothed_kernel_jacobian,
    unregularized,
    validate_assumptions,
    with_lambda,
)


def _prototype(mesh, p=2.0, c=0.0, delta=0.0, f=None):
    c_field = DiscreteField.constant(mesh, c)
    f = f if f is not None else DiscreteField.constant(mesh, 0.0)
    return make_prototype(p, c_field, f, delta)


def test_smoothed_kernel_jacobian_matches_finite_differences():
    rng = np.random.default_rng(3)
    xi = rng.normal(size=(5, 2))
    for p in (1.6, 2.0, 3.0):
        jac = smoothed_kernel_jacobian(xi, p, 1e-3)
        h = 1e-6
        for j in range(2):
            shift = np.zeros_like(xi)
            shift[:, j] = h
            column = (smoothed_kernel(xi + shift, p, 1e-3) - smoothed_kernel(xi - shift, p, 1e-3)) / (2.0 * h)
            np.testing.assert_allclose(jac[:, :, j], column, rtol=1e-6, atol=1e-8)


def test_smoothed_kernel_at_zero():
    zero = np.zeros((1, 2))
    np.testing.assert_array_equal(smoothed_kernel(zero, 1.5, 0.0), zero)
    np.testing.assert_allclose(smoothed_kernel_jacobian(zero, 2.0, 0.0)[0], np.eye(2))


@pytest.mark.parametrize('p, delta', [(1.6, 0.0), (1.6, 1e-6), (1.6, 0.5), (2.0, 0.0), (3.0, 0.0), (3.0, 1e-6)])
def test_prototype_satisfies_assumptions(mesh_2d, p, delta):
    spec = _prototype(mesh_2d, p=p, c=0.3, delta=delta)
    report = validate_assumptions(spec, SampleGrid(seed=5))
    assert report.passed, report.failed()
    assert [check.name for check in report.checks] == [
        'coercivity', 'monotonicity', 'growth', 'convection_growth', 'compatibility',
    ]


def test_prototype_coercivity_constant_for_small_p():
    mesh = build_mesh('interval(0, 1)', 4)
    spec = _prototype(mesh, p=1.5, delta=0.1)
    assert spec.alpha == pytest.approx(2.0 ** -0.25)
    assert spec.coercivity_slack == pytest.approx(spec.alpha * 0.1 ** 1.5)
    assert _prototype(mesh, p=1.5).alpha == 1.0


def test_weak_coercivity_is_reported(mesh_1d):
    spec = _prototype(mesh_1d)
    weak = OperatorSpec(
        p=2.0, alpha=1.0,
        a=lambda x, s, xi: 0.5 * xi,
        phi=spec.phi,
        c_field=spec.c_field,
        f=spec.f,
    )
    report = validate_assumptions(weak)
    assert report.failed() == ['coercivity']
    assert report.get('coercivity').margin < 0.0
    assert 'measured_alpha=0.5' in report.get('coercivity').detail


def test_non_monotone_flux_is_reported(mesh_1d):
    spec = _prototype(mesh_1d)
    wiggly = OperatorSpec(
        p=2.0, alpha=0.5,
        a=lambda x, s, xi: xi * (1.0 + 0.9 * np.cos(3.0 * np.linalg.norm(xi, axis=1)))[:, None],
        phi=spec.phi,
        c_field=spec.c_field,
        f=spec.f,
        growth_a0=2.0,
    )
    assert 'monotonicity' in validate_assumptions(wiggly).failed()


def test_flat_flux_fails_strict_monotonicity(mesh_1d):
    spec = _prototype(mesh_1d)
    flat = OperatorSpec(
        p=2.0, alpha=1.0,
        a=lambda x, s, xi: np.maximum(np.linalg.norm(xi, axis=1) - 1.0, 0.0)[:, None] * xi,
        phi=spec.phi,
        c_field=spec.c_field,
        f=spec.f,
        growth_a0=10.0,
    )
    check = validate_assumptions(flat).get('monotonicity')
    assert not check.passed
    assert check.margin == 0.0
    assert check.witness['xi'] != check.witness['eta']


def test_incompatible_datum_is_a_failed_check(mesh_1d):
    spec = _prototype(mesh_1d, f=DiscreteField.constant(mesh_1d, 1.0))
    report = validate_assumptions(spec)
    assert report.failed() == ['compatibility']
    assert not spec.is_compatible()
    assert report.to_dict()['passed'] is False


def test_lambda_checks(mesh_1d):
    spec = create_operator('power-lambda', mu=2.0, r=3.0).build(2.0, DiscreteField.constant(mesh_1d, 0.0),
                                                                 DiscreteField.constant(mesh_1d, 1.0))
    report = validate_assumptions(spec)
    assert report.passed, report.failed()
    names = [check.name for check in report.checks]
    assert names[-3:] == ['lambda_sign', 'lambda_bound', 'lambda_coercivity']
    assert spec.is_compatible()


def test_lambda_bound_tabulates_sampled_constants(mesh_1d):
    spec = create_operator('power-lambda', mu=2.0, r=3.0).build(2.0, DiscreteField.constant(mesh_1d, 0.0),
                                                                 DiscreteField.constant(mesh_1d, 1.0))
    check = validate_assumptions(spec).get('lambda_bound')
    assert check.passed
    assert check.to_dict()['margin'] is None
    assert check.witness['c_k'] == pytest.approx({'0.5': 0.5, '2': 8.0, '8': 128.0})


def test_unbounded_lambda_fails_the_bound(mesh_1d):
    spec = with_lambda(
        _prototype(mesh_1d),
        lambda x, s: np.where(np.abs(s) >= 8.0, np.copysign(np.inf, s), s),
        profile=lambda s: np.abs(s),
    )
    report = validate_assumptions(spec)
    assert report.failed() == ['lambda_bound']
    check = report.get('lambda_bound')
    assert check.witness['unbounded_at_k'] == 8.0
    assert check.witness['c_k']['8'] is None


def test_wrong_lambda_sign_is_reported(mesh_1d):
    spec = with_lambda(_prototype(mesh_1d), lambda x, s: -s, profile=lambda s: np.abs(s))
    assert 'lambda_sign' in validate_assumptions(spec).failed()


def test_missing_profile_fails_lambda_coercivity(mesh_1d):
    spec = with_lambda(_prototype(mesh_1d), lambda x, s: s)
    report = validate_assumptions(spec)
    assert report.failed() == ['lambda_coercivity']
    assert report.to_dict()['checks'][-1]['margin'] is None


def test_negative_coefficient_rejected(mesh_1d):
    with pytest.raises(InvalidFieldError):
        make_prototype(2.0, DiscreteField.constant(mesh_1d, -1.0), DiscreteField.constant(mesh_1d, 0.0))


@pytest.mark.parametrize('p', [1.0, 0.5])
def test_exponent_must_exceed_one(mesh_1d, p):
    with pytest.raises(InvalidParameterError):
        _prototype(mesh_1d, p=p)


def test_q_exponent_defaults():
    assert default_q_exponent(1.5, 2) == pytest.approx(4.0)
    assert default_q_exponent(2.0, 2) == pytest.approx(3.0)
    assert math.isinf(default_q_exponent(3.0, 2))


def test_regularize_requires_positive_epsilon(mesh_1d):
    spec = _prototype(mesh_1d)
    with pytest.raises(InvalidParameterError):
        regularize(spec, 0.0)
    assert unregularized(spec).epsilon == 0.0
    assert math.isinf(unregularized(spec).height)


def test_regularized_convection_is_truncated_componentwise(mesh_2d):
    spec = make_prototype(2.0, DiscreteField.constant(mesh_2d, 1.0), DiscreteField.constant(mesh_2d, 0.0),
                          direction=(1.0, 1.0))
    rspec = regularize(spec, 0.1)
    x = np.array([[0.5, 0.5], [0.5, 0.5]])
    s = np.array([100.0, -100.0])
    phi = rspec.phi_eps(x, s)
    np.testing.assert_allclose(phi, [[10.0, 10.0], [-10.0, -10.0]])
    np.testing.assert_array_equal(rspec.dphi_eps_ds(x, s), 0.0)


def test_regularized_flux_adds_epsilon_kernel(mesh_1d):
    rspec = regularize(_prototype(mesh_1d, p=3.0), 0.5)
    xi = np.array([[2.0]])
    value = rspec.a_eps(np.zeros((1, 1)), np.zeros(1), xi)
    assert value[0, 0] == pytest.approx(1.5 * 4.0)


def test_with_delta_keeps_datum_and_name(mesh_1d):
    f = DiscreteField.sample(mesh_1d, lambda x: np.cos(np.pi * x[:, 0]))
    spec = create_operator('power-lambda').build(1.6, DiscreteField.constant(mesh_1d, 0.1), f, 0.0)
    smoothed = regularize(spec, 0.1, delta=1e-3).base
    assert smoothed.delta == 1e-3
    assert smoothed.name == 'power-lambda'
    assert smoothed.f is f
    assert smoothed.has_lambda


def test_prepare_datum_invariants():
    mesh = build_mesh('interval(0, 1)', 200)
    raw = DiscreteField.sample(mesh, dipole(0.3, 0.7, 0.02, 1.0, 1))
    reference = lp_norm(raw, 1.0)
    for epsilon in (1.0, 0.1, 0.01, 1e-4):
        f_eps = prepare_datum(raw, mesh, epsilon)
        assert abs(f_eps.integral()) <= 1e-12 * max(1.0, reference)
        assert lp_norm(f_eps, 1.0) <= reference * (1.0 + 1e-12)
        assert np.max(np.abs(f_eps.nodal_values)) <= 1.0 / epsilon * (1.0 + 1e-12) + 1e-12


def test_prepare_datum_keeps_bounded_data():
    mesh = build_mesh('interval(0, 1)', 64)
    raw = DiscreteField.sample(mesh, lambda x: np.cos(np.pi * x[:, 0]))
    f_eps = prepare_datum(raw, mesh, 1e-3)
    np.testing.assert_allclose(f_eps.nodal_values, project_datum(raw, mesh).nodal_values, atol=1e-14)


def test_prepare_datum_clamps_before_mean_correction():
    mesh = build_mesh('interval(0, 1)', 64)
    raw = DiscreteField.sample(mesh, lambda x: 1.0 + 2.0 * np.cos(np.pi * x[:, 0]))
    f_eps = prepare_datum(raw, mesh, 1.0)
    clamped = raw.with_values(np.clip(raw.nodal_values, -1.0, 1.0))
    expected = clamped.shifted(-clamped.integral())
    np.testing.assert_allclose(f_eps.nodal_values, expected.nodal_values, atol=1e-14)
    assert abs(f_eps.integral()) <= 1e-12
    assert lp_norm(f_eps, 1.0) <= lp_norm(raw, 1.0)


def test_prepare_datum_without_compatibility_keeps_mass():
    mesh = build_mesh('interval(0, 1)', 128)
    raw = DiscreteField.sample(mesh, bump(0.5, 0.1, 1.0, 1))
    f_eps = prepare_datum(raw, mesh, 0.5, require_compat=False)
    assert f_eps.integral() > 0.0
    assert np.max(f_eps.nodal_values) <= 2.0 + 1e-12


def test_prepare_datum_of_zero_field(mesh_1d):
    f_eps = prepare_datum(DiscreteField.constant(mesh_1d, 0.0), mesh_1d, 0.1)
    assert not np.any(f_eps.nodal_values)


def test_project_datum_from_other_mesh():
    coarse = build_mesh('interval(0, 1)', 4)
    fine = build_mesh('interval(0, 1)', 8)
    field = DiscreteField.sample(coarse, lambda x: x[:, 0] - 0.5)
    projected = project_datum(field, fine, require_compat=False)
    np.testing.assert_allclose(projected.nodal_values, fine.nodes[:, 0] - 0.5, atol=1e-14)
