#!/usr/bin/env python3
"""
Discrete weak solves.

``assemble`` builds the P1 Galerkin residual

    R_i(u; v) = int a_eps(x, v, grad u) . grad phi_i + int Phi_eps(x, v) . grad phi_i - int f phi_i

and its exact derivative in u. ``inner_solve`` applies damped Newton to the
frozen-coefficient problem (constants removed by a gauge, then the median
shifted to 0); ``fixed_point_solve`` iterates the map v -> u;
``zero_order_solve`` adds the lambda term and drops the gauge.
``coupled_newton_solve`` treats v = u as one nonlinear system and serves as a
cross-check of the fixed point.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .calculus import lp_norm, median, median_node
from .errors import (
    CompatibilityError,
    FixedPointNonConvergenceError,
    InvalidParameterError,
    NonConvergenceError,
    NumericError,
    ValidationError,
)
from .logs import log_stage
from .mesh import DiscreteField, Mesh, quadrature_rule
from .model import RegularizedSpec

logger = logging.getLogger(__name__)

GAUGES = ('zero_mean_multiplier', 'pin_node')
ARMIJO_C = 1e-4
COMPAT_RTOL = 1e-10
MIN_RELAXATION = 1.0 / 64.0


@dataclass(frozen=True, slots=True)
class SolveOptions:
    """
    Newton and Picard controls.

    Attributes:
        newton_tol: residual tolerance relative to max(||source||, ||F(u0)||)
        newton_max_iter: Newton iteration cap
        damping: backtracking factor
        min_step: smallest accepted step length before Newton gives up
        picard_tol: relative L^p distance between successive Picard iterates
        picard_max_iter: Picard iteration cap
        relaxation: mixing weight theta in v <- theta u + (1 - theta) v
        gauge: 'zero_mean_multiplier' or 'pin_node'
        pin_node: node held fixed by the 'pin_node' gauge
        quadrature_order: exactness degree of the element quadrature
    """

    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    damping: float = 0.5
    min_step: float = 2.0 ** -20
    picard_tol: float = 1e-8
    picard_max_iter: int = 200
    relaxation: float = 1.0
    gauge: str = 'zero_mean_multiplier'
    pin_node: int = 0
    quadrature_order: int = 4

    def __post_init__(self) -> None:
        for name in ('newton_tol', 'picard_tol', 'min_step'):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise InvalidParameterError(f"{name} must be a positive number, got {value!r}", option=name)
        if not 0.0 < self.damping < 1.0:
            raise InvalidParameterError(f"damping must lie in (0, 1), got {self.damping!r}", option='damping')
        if not 0.0 < self.relaxation <= 1.0:
            raise InvalidParameterError(f"relaxation must lie in (0, 1], got {self.relaxation!r}", option='relaxation')
        for name in ('newton_max_iter', 'picard_max_iter', 'quadrature_order'):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be >= 1", option=name)
        if self.gauge not in GAUGES:
            raise InvalidParameterError(f"Unknown gauge {self.gauge!r}; use one of {', '.join(GAUGES)}", option='gauge')
        if self.pin_node < 0:
            raise InvalidParameterError("pin_node must be >= 0", option='pin_node')


@dataclass(frozen=True, slots=True, eq=False)
class WeakSolution:
    """
    Result of a Picard/Newton solve.

    ``field`` has median 0 except on the zero-order path, where ``median``
    reports the value instead.
    """

    field: DiscreteField
    iterations: int
    inner_newton_counts: tuple[int, ...]
    final_residual: float
    gauge_shift: float
    distances: tuple[float, ...] = ()
    median: float = 0.0
    compatibility_residual: float = 0.0
    relaxation: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            'iterations': self.iterations,
            'inner_newton_counts': list(self.inner_newton_counts),
            'final_residual': self.final_residual,
            'gauge_shift': self.gauge_shift,
            'distances': list(self.distances),
            'median': self.median,
            'compatibility_residual': self.compatibility_residual,
            'relaxation': self.relaxation,
            'nodes': self.field.mesh.n_nodes,
        }


@dataclass(frozen=True, slots=True, eq=False)
class Assembly:
    residual: np.ndarray
    jacobian: Optional[sparse.csr_matrix]
    source: np.ndarray


def _scatter(mesh: Mesh, local: np.ndarray) -> np.ndarray:
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.n_nodes)


def _sparse(mesh: Mesh, local: np.ndarray) -> sparse.csr_matrix:
    k = mesh.dimension + 1
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)).tocsr()


def _check_finite(local: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(local.reshape(local.shape[0], -1))
    if np.any(bad):
        element = int(np.argmax(bad.any(axis=1)))
        raise NumericError(f"Non-finite {what} in element {element}", element=element)


def laplace_matrix(mesh: Mesh) -> sparse.csr_matrix:
    """P1 stiffness matrix of -Laplace with natural boundary conditions."""
    B = mesh.basis_gradients
    local = mesh.element_measures[:, None, None] * np.einsum('eik,ejk->eij', B, B)
    return _sparse(mesh, local)


def assemble(
    mesh: Mesh,
    rspec: RegularizedSpec,
    v: DiscreteField,
    u: DiscreteField,
    zero_order: bool = False,
    coupled: bool = False,
    with_jacobian: bool = True,
    order: int = 4,
) -> Assembly:
    """
    Residual and Jacobian of the frozen-coefficient problem at u.

    Args:
        mesh: mesh shared by u, v and the datum
        rspec: regularized operator; its datum is f
        v: frozen state entering a_eps(x, v, .) and Phi_eps(x, v)
        u: current iterate
        zero_order: add eps (delta^2+u^2)^((p-2)/2) u + lambda(x, T(u)) tested with phi_i
        coupled: also differentiate through v (caller passes v = u)
        with_jacobian: skip the Jacobian for line-search trials
        order: quadrature exactness degree

    Returns:
        Assembly with residual, Jacobian (csr) and the source vector int f phi_i

    Raises:
        NumericError: non-finite entry, carrying the element index
    """
    if not (u.mesh.n_nodes == v.mesh.n_nodes == rspec.f.mesh.n_nodes == mesh.n_nodes):
        raise InvalidParameterError("u, v and the datum must live on the same mesh")
    rule = quadrature_rule(mesh.dimension, order)
    m, q, d = mesh.n_elements, rule.size, mesh.dimension
    X = mesh.quadrature_points(rule).reshape(-1, d)
    W = mesh.quadrature_weights(rule)
    N = rule.points                                   # (q, d+1) basis values
    B = mesh.basis_gradients                          # (m, d+1, d)
    G = np.repeat(u.gradients(), q, axis=0)           # (m*q, d)
    V = v.at_quadrature(rule).reshape(-1)

    flux = rspec.a_eps(X, V, G) + rspec.phi_eps(X, V)
    flux_int = np.einsum('eq,eqk->ek', W, flux.reshape(m, q, d))
    local_r = np.einsum('ek,eik->ei', flux_int, B)
    F = rspec.f.at_quadrature(rule)
    local_s = np.einsum('eq,eq,qi->ei', W, F, N)
    local_r = local_r - local_s

    if zero_order:
        U = u.at_quadrature(rule).reshape(-1)
        Z = rspec.zero_order(X, U).reshape(m, q)
        local_r = local_r + np.einsum('eq,eq,qi->ei', W, Z, N)
    _check_finite(local_r, 'residual')
    residual = _scatter(mesh, local_r)
    source = _scatter(mesh, local_s)
    if not with_jacobian:
        return Assembly(residual, None, source)

    JA = rspec.da_eps_dxi(X, V, G).reshape(m, q, d, d)
    JA_int = np.einsum('eq,eqkl->ekl', W, JA)
    local_j = np.einsum('eik,ekl,ejl->eij', B, JA_int, B)
    if zero_order:
        dZ = rspec.zero_order_ds(X, U).reshape(m, q)
        local_j = local_j + np.einsum('eq,eq,qi,qj->eij', W, dZ, N, N)
    if coupled:
        dflux = (rspec.da_eps_ds(X, V, G) + rspec.dphi_eps_ds(X, V)).reshape(m, q, d)
        local_j = local_j + np.einsum('eq,eqk,eik,qj->eij', W, dflux, B, N)
    _check_finite(local_j, 'Jacobian')
    return Assembly(residual, _sparse(mesh, local_j), source)


class _Gauge:
    """Removal of the constant null direction from the Newton system."""

    def __init__(self, kind: str, mesh: Mesh, pin_node: int = 0):
        self.kind = kind
        self.mesh = mesh
        self.n = mesh.n_nodes
        self.pin_node = pin_node
        if kind == 'pin_node' and pin_node >= self.n:
            raise InvalidParameterError(f"pin_node {pin_node} outside the mesh", pin_node=pin_node)
        self.free = np.delete(np.arange(self.n), pin_node) if kind == 'pin_node' else None
        self.weights = mesh.node_measures

    def state(self, u: np.ndarray) -> np.ndarray:
        if self.kind == 'zero_mean_multiplier':
            return np.append(u, 0.0)
        return u.copy()

    def values(self, x: np.ndarray) -> np.ndarray:
        return x[:self.n]

    def multiplier(self, x: np.ndarray) -> float:
        return float(x[self.n]) if self.kind == 'zero_mean_multiplier' else 0.0

    def residual(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        if self.kind == 'zero_mean_multiplier':
            mu = x[self.n]
            return np.append(r + mu * self.weights, np.dot(self.weights, x[:self.n]))
        if self.kind == 'pin_node':
            return r[self.free]
        return r

    def matrix(self, jac: sparse.csr_matrix) -> sparse.csr_matrix:
        if self.kind == 'zero_mean_multiplier':
            col = sparse.csr_matrix(self.weights[:, None])
            return sparse.bmat([[jac, col], [col.T, None]], format='csc')
        if self.kind == 'pin_node':
            return jac[self.free][:, self.free].tocsc()
        return jac.tocsc()

    def expand(self, step: np.ndarray) -> np.ndarray:
        if self.kind == 'pin_node':
            full = np.zeros(self.n)
            full[self.free] = step
            return full
        return step


class _MedianNodeGauge(_Gauge):
    """Coupled oracle: multiplier on the residual plus u_k = 0 at the median node k."""

    def __init__(self, mesh: Mesh):
        super().__init__('zero_mean_multiplier', mesh)
        self.node = 0

    def residual(self, x: np.ndarray, r: np.ndarray) -> np.ndarray:
        return np.append(r + x[self.n] * self.weights, x[self.node])

    def matrix(self, jac: sparse.csr_matrix) -> sparse.csr_matrix:
        col = sparse.csr_matrix(self.weights[:, None])
        row = sparse.csr_matrix(([1.0], ([0], [self.node])), shape=(1, self.n))
        return sparse.bmat([[jac, col], [row, None]], format='csc')


def _linear_solve(matrix: sparse.spmatrix, rhs: np.ndarray) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter('error', MatrixRankWarning)
        try:
            step = spsolve(matrix, rhs)
        except MatrixRankWarning:
            raise NumericError("Singular Newton matrix") from None
    step = np.atleast_1d(step)
    if not np.all(np.isfinite(step)):
        raise NumericError("Non-finite Newton step")
    return step


@dataclass(slots=True)
class _NewtonResult:
    values: np.ndarray
    multiplier: float
    iterations: int
    residual: np.ndarray
    residual_norm: float
    merits: list[float] = field(default_factory=list)


def _damped_newton(
    mesh: Mesh,
    rspec: RegularizedSpec,
    v: Optional[DiscreteField],
    u0: np.ndarray,
    options: SolveOptions,
    gauge: _Gauge,
    zero_order: bool = False,
    coupled: bool = False,
) -> _NewtonResult:
    """
    Newton with Armijo backtracking on the merit 1/2 ||F||^2 of the gauged
    residual F. Stops when ||F|| <= newton_tol * max(||source||, ||F(u0)||).
    """

    def evaluate(x: np.ndarray, with_jacobian: bool) -> tuple[Assembly, np.ndarray]:
        u = DiscreteField(mesh, gauge.values(x))
        assembly = assemble(
            mesh, rspec, u if coupled else v, u,
            zero_order=zero_order, coupled=coupled,
            with_jacobian=with_jacobian, order=options.quadrature_order,
        )
        return assembly, gauge.residual(x, assembly.residual)

    if isinstance(gauge, _MedianNodeGauge):
        gauge.node = median_node(DiscreteField(mesh, u0))
    x = gauge.state(u0)
    assembly, F = evaluate(x, True)
    norm = float(np.linalg.norm(F))
    target = options.newton_tol * max(float(np.linalg.norm(assembly.source)), norm)
    merits = [0.5 * norm * norm]
    history = [norm]
    iterations = 0
    while norm > target:
        if iterations >= options.newton_max_iter:
            raise NonConvergenceError(
                f"Newton did not converge in {options.newton_max_iter} iterations (residual {norm:.3e})",
                residual_history=history,
            )
        step = gauge.expand(_linear_solve(gauge.matrix(assembly.jacobian), -F))
        t = 1.0
        while True:
            if t < options.min_step:
                raise NonConvergenceError(
                    f"Newton stagnated after {iterations} iterations (residual {norm:.3e})",
                    residual_history=history,
                )
            trial = x + t * step
            try:
                _, F_trial = evaluate(trial, False)
            except NumericError:
                t *= options.damping
                continue
            merit_trial = 0.5 * float(np.dot(F_trial, F_trial))
            if merit_trial <= (1.0 - 2.0 * ARMIJO_C * t) * merits[-1]:
                break
            t *= options.damping
        x = trial
        iterations += 1
        if isinstance(gauge, _MedianNodeGauge):
            gauge.node = median_node(DiscreteField(mesh, gauge.values(x)))
        assembly, F = evaluate(x, True)
        norm = float(np.linalg.norm(F))
        merits.append(0.5 * norm * norm)
        history.append(norm)
        logger.debug(f"newton it={iterations} step={t:.3g} residual={norm:.3e}")
    return _NewtonResult(gauge.values(x).copy(), gauge.multiplier(x), iterations, assembly.residual, norm, merits)


def _initial_guess(mesh: Mesh, rspec: RegularizedSpec, u0: np.ndarray, zero_order: bool) -> np.ndarray:
    """
    For p != 2 a flat start has a degenerate (or unbounded) Jacobian; start
    from the Laplace solution w scaled so that int |grad(s w)|^p = int f (s w).
    """
    start = DiscreteField(mesh, u0)
    if rspec.p == 2.0 or np.any(start.gradients() != 0.0):
        return u0
    rule = quadrature_rule(mesh.dimension, 2)
    source = np.einsum(
        'eq,eq,qi->ei', mesh.quadrature_weights(rule), rspec.f.at_quadrature(rule), rule.points,
    )
    rhs = _scatter(mesh, source)
    if not np.any(rhs):
        return u0
    K = laplace_matrix(mesh)
    if zero_order:
        w = _linear_solve((K + sparse.diags(mesh.node_measures)).tocsc(), rhs)
    else:
        gauge = _Gauge('zero_mean_multiplier', mesh)
        w = _linear_solve(gauge.matrix(K), np.append(rhs, 0.0))[:mesh.n_nodes]
    energy = float(np.dot(mesh.element_measures, np.linalg.norm(DiscreteField(mesh, w).gradients(), axis=1) ** rspec.p))
    work = float(np.dot(rhs, w))
    if energy <= 0.0 or work <= 0.0:
        return u0
    scale = (work / energy) ** (1.0 / (rspec.p - 1.0))
    return u0 + scale * w


@dataclass(frozen=True, slots=True, eq=False)
class _InnerResult:
    field: DiscreteField
    newton_iterations: int
    residual_norm: float
    gauge_shift: float
    compatibility_residual: float


def _check_compatibility(rspec: RegularizedSpec) -> None:
    f = rspec.f
    integral = f.integral()
    allowed = COMPAT_RTOL * max(1.0, lp_norm(f, 1.0))
    if abs(integral) > allowed:
        raise CompatibilityError(
            f"Datum violates the compatibility condition: int f = {integral:.3e}",
            integral=integral,
            allowed=allowed,
        )


def _inner(
    mesh: Mesh,
    rspec: RegularizedSpec,
    v: DiscreteField,
    options: SolveOptions,
    start: Optional[DiscreteField] = None,
    zero_order: bool = False,
) -> _InnerResult:
    u0 = (start if start is not None else v).nodal_values.copy()
    u0 = _initial_guess(mesh, rspec, u0, zero_order)
    gauge = _Gauge('none', mesh) if zero_order else _Gauge(options.gauge, mesh, options.pin_node)
    with log_stage('NEWTON'):
        result = _damped_newton(mesh, rspec, v, u0, options, gauge, zero_order=zero_order)
    compat = abs(float(np.sum(result.residual)))
    solved = DiscreteField(mesh, result.values)
    if zero_order:
        return _InnerResult(solved, result.iterations, result.residual_norm, 0.0, compat)
    shift = -median(solved)
    return _InnerResult(solved.shifted(shift), result.iterations, result.residual_norm, shift, compat)


def inner_solve(
    mesh: Mesh,
    rspec: RegularizedSpec,
    v: DiscreteField,
    options: Optional[SolveOptions] = None,
) -> DiscreteField:
    """
    The frozen-coefficient map v -> u: damped Newton on the gauge-fixed system,
    then the constant shift that makes median(u) = 0.

    Raises:
        CompatibilityError: int f is not zero (no zero-order term)
        NonConvergenceError: Newton stagnated
    """
    options = options or SolveOptions()
    _check_compatibility(rspec)
    return _inner(mesh, rspec, v, options).field


def _picard(
    mesh: Mesh,
    rspec: RegularizedSpec,
    options: SolveOptions,
    initial: Optional[DiscreteField],
    zero_order: bool,
) -> WeakSolution:
    v = initial if initial is not None else DiscreteField.constant(mesh, 0.0)
    p = rspec.p
    if rspec.is_v_independent:
        with log_stage('PICARD_1'):
            inner = _inner(mesh, rspec, v, options, zero_order=zero_order)
        logger.info(f"Picard converged in 1 iteration (v-independent map), newton={inner.newton_iterations}")
        return _solution(inner, 1, [inner.newton_iterations], [], options.relaxation)

    theta = options.relaxation
    distances: list[float] = []
    counts: list[int] = []
    increases = 0
    start: Optional[DiscreteField] = None
    for j in range(1, options.picard_max_iter + 1):
        with log_stage(f"PICARD_{j}"):
            inner = _inner(mesh, rspec, v, options, start=start, zero_order=zero_order)
        counts.append(inner.newton_iterations)
        start = inner.field
        v_next = v.scaled(1.0 - theta) + inner.field.scaled(theta) if theta < 1.0 else inner.field
        distance = lp_norm(v_next - v, p)
        scale = max(1.0, lp_norm(v, p))
        if distances and distance > distances[-1]:
            increases += 1
        else:
            increases = 0
        distances.append(distance)
        logger.debug(f"picard it={j} distance={distance:.3e} theta={theta:g}")
        if distance <= options.picard_tol * scale:
            logger.info(f"Picard converged in {j} iterations (distance {distance:.3e})")
            return _solution(inner, j, counts, distances, theta)
        if increases >= 2 and theta > MIN_RELAXATION:
            theta = max(MIN_RELAXATION, 0.5 * theta)
            increases = 0
            logger.info(f"Picard distances increasing; relaxation halved to {theta:g}")
        v = v_next
    raise FixedPointNonConvergenceError(
        f"Picard iteration did not converge in {options.picard_max_iter} iterations",
        distance_history=distances,
        relaxation=theta,
    )


def _solution(
    inner: _InnerResult,
    iterations: int,
    counts: list[int],
    distances: list[float],
    theta: float,
) -> WeakSolution:
    return WeakSolution(
        field=inner.field,
        iterations=iterations,
        inner_newton_counts=tuple(counts),
        final_residual=inner.residual_norm,
        gauge_shift=inner.gauge_shift,
        distances=tuple(distances),
        median=median(inner.field),
        compatibility_residual=inner.compatibility_residual,
        relaxation=theta,
    )


def fixed_point_solve(
    mesh: Mesh,
    rspec: RegularizedSpec,
    options: Optional[SolveOptions] = None,
    initial: Optional[DiscreteField] = None,
) -> WeakSolution:
    """
    Picard iteration v_{j+1} = (1 - theta) v_j + theta Gamma(v_j) from
    v_0 = 0 (or ``initial``), stopping when
    ||v_{j+1} - v_j||_p <= picard_tol * max(1, ||v_j||_p).

    theta is halved (down to 1/64) after two consecutive distance increases.

    Raises:
        CompatibilityError: int f is not zero
        FixedPointNonConvergenceError: picard_max_iter exceeded
    """
    options = options or SolveOptions()
    _check_compatibility(rspec)
    return _picard(mesh, rspec, options, initial, zero_order=False)


_SIGN_LEVELS = (1e-2, 1e-1, 1.0, 10.0, 100.0)


def _check_lambda_sign(mesh: Mesh, rspec: RegularizedSpec, order: int) -> None:
    rule = quadrature_rule(mesh.dimension, order)
    X = mesh.quadrature_points(rule).reshape(-1, mesh.dimension)
    levels = [s for s in _SIGN_LEVELS if s <= rspec.height] or [rspec.height]
    for s in levels:
        for signed in (s, -s):
            S = np.full(X.shape[0], signed)
            product = rspec.base.lambda_term(X, S) * S
            if np.any(product < 0.0):
                i = int(np.argmin(product))
                raise ValidationError(
                    f"lambda(x, s) s < 0 at x={list(X[i])}, s={signed:g}",
                    x=[float(c) for c in X[i]],
                    s=signed,
                )


def zero_order_solve(
    mesh: Mesh,
    rspec: RegularizedSpec,
    options: Optional[SolveOptions] = None,
    initial: Optional[DiscreteField] = None,
) -> WeakSolution:
    """
    Picard/Newton for the problem with the zero-order terms; no gauge, no
    compatibility requirement and no median shift (the median is reported).

    Raises:
        ValidationError: lambda missing or lambda(x, s) s < 0 at a sample point
    """
    options = options or SolveOptions()
    if not rspec.has_lambda:
        raise ValidationError("zero-order solve needs a lambda term")
    _check_lambda_sign(mesh, rspec, options.quadrature_order)
    return _picard(mesh, rspec, options, initial, zero_order=True)


def coupled_newton_solve(
    mesh: Mesh,
    rspec: RegularizedSpec,
    options: Optional[SolveOptions] = None,
) -> WeakSolution:
    """
    Fully coupled damped Newton for R(u; v = u) = 0 with median(u) = 0,
    the constraint imposed at the current median node. Started from the
    frozen solve at v = 0.
    """
    options = options or SolveOptions()
    _check_compatibility(rspec)
    zero = DiscreteField.constant(mesh, 0.0)
    start = _inner(mesh, rspec, zero, options)
    with log_stage('COUPLED'):
        result = _damped_newton(
            mesh, rspec, None, start.field.nodal_values.copy(), options, _MedianNodeGauge(mesh), coupled=True,
        )
    solved = DiscreteField(mesh, result.values)
    return WeakSolution(
        field=solved,
        iterations=1,
        inner_newton_counts=(start.newton_iterations, result.iterations),
        final_residual=result.residual_norm,
        gauge_shift=0.0,
        median=median(solved),
        compatibility_residual=abs(float(np.sum(result.residual))),
    )
