"""Mesh refinement against manufactured solutions."""

import numpy as np
import pytest

from neumann_renorm import create_operator
from neumann_renorm.data import manufactured_cosine
from neumann_renorm.mesh import DiscreteField, build_mesh
from neumann_renorm.model import make_prototype, project_datum, unregularized
from neumann_renorm.solver import SolveOptions, fixed_point_solve, zero_order_solve

from conftest import gradient_error, l2_error, l2_error_plain, observed_orders


def _solve_manufactured(domain, resolution, p, options=None):
    mesh = build_mesh(domain, resolution)
    case = manufactured_cosine(mesh.dimension, p)
    f = DiscreteField.sample(mesh, case.datum)
    spec = make_prototype(p, DiscreteField.constant(mesh, 0.0), f)
    solution = fixed_point_solve(mesh, unregularized(spec, datum=project_datum(f, mesh)), options)
    return solution, case


@pytest.mark.parametrize('domain', ['interval(0, 1)', 'unit_square'])
def test_linear_case_converges_at_second_order(domain):
    errors = []
    for resolution in (16, 32, 64):
        solution, case = _solve_manufactured(domain, resolution, 2.0)
        assert solution.iterations == 1
        errors.append(l2_error(solution.field, case.solution))
    assert min(observed_orders(errors)) >= 1.9


def test_p_laplacian_gradient_converges_at_first_order():
    options = SolveOptions(newton_tol=1e-12)
    errors = []
    for resolution in (32, 64, 128):
        solution, case = _solve_manufactured('interval(0, 1)', resolution, 3.0, options)
        errors.append(gradient_error(solution.field, case.gradient, 3.0))
    assert min(observed_orders(errors)) >= 0.9


def test_zero_order_case_converges_at_second_order():
    errors = []
    for resolution in (16, 32, 64):
        mesh = build_mesh('interval(0, 1)', resolution)
        case = manufactured_cosine(1, 2.0, reaction=(1.0, 2.0))
        f = DiscreteField.sample(mesh, case.datum)
        spec = create_operator('power-lambda', mu=1.0, r=2.0).build(2.0, DiscreteField.constant(mesh, 0.0), f)
        solution = zero_order_solve(mesh, unregularized(spec, datum=f))
        errors.append(l2_error_plain(solution.field, case.solution))
    assert min(observed_orders(errors)) >= 1.9


def test_zero_order_run_with_unit_mass_completes():
    mesh = build_mesh('interval(0, 1)', 64)
    f = DiscreteField.constant(mesh, 1.0)
    spec = create_operator('power-lambda', mu=1.0, r=2.0).build(2.0, DiscreteField.constant(mesh, 0.0), f)
    solution = zero_order_solve(mesh, unregularized(spec, datum=f))
    assert f.integral() == pytest.approx(1.0)
    assert solution.field.integral() == pytest.approx(1.0, rel=1e-10)
    assert np.all(np.isfinite(solution.field.nodal_values))
