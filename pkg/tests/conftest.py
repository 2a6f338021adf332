"""Shared fixtures and error measures for the solver tests."""

import math
from pathlib import Path

import numpy as np
import pytest

from neumann_renorm.mesh import DiscreteField, Mesh, build_mesh, quadrature_rule, unit_square

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / 'configs'


@pytest.fixture
def mesh_1d() -> Mesh:
    return build_mesh('interval(0, 1)', 16)


@pytest.fixture
def mesh_2d() -> Mesh:
    return build_mesh(unit_square(), 6)


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


def zero_field(mesh: Mesh) -> DiscreteField:
    return DiscreteField.constant(mesh, 0.0)


def l2_error(field: DiscreteField, exact, order: int = 5) -> float:
    """||u_h - u*||_2 with both sides shifted to zero mean."""
    mesh = field.mesh
    rule = quadrature_rule(mesh.dimension, order)
    W = mesh.quadrature_weights(rule)
    X = mesh.quadrature_points(rule).reshape(-1, mesh.dimension)
    U = field.at_quadrature(rule)
    E = exact(X).reshape(U.shape)
    U = U - np.sum(W * U) / mesh.total_measure
    E = E - np.sum(W * E) / mesh.total_measure
    return math.sqrt(float(np.sum(W * (U - E) ** 2)))


def l2_error_plain(field: DiscreteField, exact, order: int = 5) -> float:
    mesh = field.mesh
    rule = quadrature_rule(mesh.dimension, order)
    W = mesh.quadrature_weights(rule)
    X = mesh.quadrature_points(rule).reshape(-1, mesh.dimension)
    U = field.at_quadrature(rule)
    return math.sqrt(float(np.sum(W * (U - exact(X).reshape(U.shape)) ** 2)))


def gradient_error(field: DiscreteField, exact_gradient, p: float, order: int = 5) -> float:
    """||grad u_h - grad u*||_p."""
    mesh = field.mesh
    rule = quadrature_rule(mesh.dimension, order)
    W = mesh.quadrature_weights(rule)
    X = mesh.quadrature_points(rule).reshape(-1, mesh.dimension)
    G = np.repeat(field.gradients(), rule.size, axis=0)
    diff = np.linalg.norm(G - exact_gradient(X), axis=1).reshape(W.shape)
    return float(np.sum(W * diff ** p) ** (1.0 / p))


def observed_orders(errors: list[float]) -> list[float]:
    """Rates between successive halvings of h."""
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]
