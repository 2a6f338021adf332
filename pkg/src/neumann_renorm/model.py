#!/usr/bin/env python3
"""
Operator specifications, their regularization and the assumption validator.

Callables are vectorized over sample points:

    a(x, s, xi)        -> (n, d)     x: (n, d), s: (n,), xi: (n, d)
    phi(x, s)          -> (n, d)
    lambda_term(x, s)  -> (n,)

Optional derivative callables (``da_dxi`` -> (n, d, d), ``da_ds`` -> (n, d),
``dphi_ds`` -> (n, d), ``dlambda_ds`` -> (n,)) are used when present; central
finite differences stand in for missing ones.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .calculus import lp_norm
from .errors import InvalidFieldError, InvalidParameterError
from .mesh import DiscreteField, Mesh, PointwiseFunction, field_interpolator

logger = logging.getLogger(__name__)

FluxFunction = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
ConvectionFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
ScalarFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
ProfileFunction = Callable[[np.ndarray], np.ndarray]

CHECK_RTOL = 1e-12
COMPATIBILITY_RTOL = 1e-12
_FD_STEP = 1e-7


def smoothed_kernel(xi: np.ndarray, p: float, delta: float) -> np.ndarray:
    """(delta^2 + |xi|^2)^((p-2)/2) xi, row-wise; zero where xi = 0 and delta = 0."""
    base = delta * delta + np.einsum('ij,ij->i', xi, xi)
    with np.errstate(divide='ignore', invalid='ignore'):
        k = np.where(base > 0.0, base ** (0.5 * (p - 2.0)), 0.0)
    return k[:, None] * xi


def smoothed_kernel_jacobian(xi: np.ndarray, p: float, delta: float) -> np.ndarray:
    """
    d/dxi of ``smoothed_kernel``: k I + (p-2) (delta^2+|xi|^2)^((p-4)/2) xi xi^T.

    At delta = xi = 0 the value is 0 (p > 2), I (p = 2) or inf (p < 2).
    """
    n, d = xi.shape
    base = delta * delta + np.einsum('ij,ij->i', xi, xi)
    zero = base == 0.0
    with np.errstate(divide='ignore', invalid='ignore'):
        k = base ** (0.5 * (p - 2.0))
        k2 = np.where(zero, 0.0, (p - 2.0) * base ** (0.5 * (p - 4.0)))
    return k[:, None, None] * np.eye(d)[None, :, :] + k2[:, None, None] * np.einsum('ni,nj->nij', xi, xi)


def signed_power(s: np.ndarray, p: float, delta: float) -> np.ndarray:
    """(delta^2 + s^2)^((p-2)/2) s, the scalar version of ``smoothed_kernel``."""
    return smoothed_kernel(np.asarray(s, dtype=float)[:, None], p, delta)[:, 0]


def signed_power_derivative(s: np.ndarray, p: float, delta: float) -> np.ndarray:
    return smoothed_kernel_jacobian(np.asarray(s, dtype=float)[:, None], p, delta)[:, 0, 0]


def _fd_flux_jacobian(a: FluxFunction, x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
    n, d = xi.shape
    out = np.empty((n, d, d))
    for j in range(d):
        step = _FD_STEP * (1.0 + np.abs(xi[:, j]))
        shift = np.zeros_like(xi)
        shift[:, j] = step
        out[:, :, j] = (a(x, s, xi + shift) - a(x, s, xi - shift)) / (2.0 * step[:, None])
    return out


def _fd_ds(func: Callable[..., np.ndarray], x: np.ndarray, s: np.ndarray, *rest: np.ndarray) -> np.ndarray:
    step = _FD_STEP * (1.0 + np.abs(s))
    upper = np.asarray(func(x, s + step, *rest), dtype=float)
    lower = np.asarray(func(x, s - step, *rest), dtype=float)
    scale = step if upper.ndim == 1 else step[:, None]
    return (upper - lower) / (2.0 * scale)


def default_q_exponent(p: float, dimension: int) -> float:
    """Summability exponent asked of c: N/(p-1) for p < N, just above N/(N-1) at p = N."""
    if p < dimension:
        return dimension / (p - 1.0)
    if p == dimension and dimension > 1:
        return dimension / (dimension - 1.0) + 1.0
    return math.inf


@dataclass(frozen=True, slots=True, eq=False)
class OperatorSpec:
    """
    The operator triple (a, Phi, optional lambda) with its datum.

    ``alpha`` and ``coercivity_slack`` state a(x,s,xi).xi >= alpha |xi|^p - slack;
    ``growth_a0`` and ``growth_a1`` state |a| <= a0 (|xi|^{p-1} + |s|^{p-1}) + a1.
    Compatibility of ``f`` is checked (``is_compatible``) but not enforced
    here: raw data are approximated before solving.
    """

    p: float
    alpha: float
    a: FluxFunction
    phi: ConvectionFunction
    c_field: DiscreteField
    f: DiscreteField
    q_exponent: Optional[float] = None
    lambda_term: Optional[ScalarFunction] = None
    lambda_profile: Optional[ProfileFunction] = None
    da_dxi: Optional[Callable[..., np.ndarray]] = None
    da_ds: Optional[Callable[..., np.ndarray]] = None
    dphi_ds: Optional[ConvectionFunction] = None
    dlambda_ds: Optional[ScalarFunction] = None
    delta: float = 0.0
    coercivity_slack: float = 0.0
    growth_a0: float = 1.0
    growth_a1: float = 0.0
    a_depends_on_s: bool = False
    phi_depends_on_s: bool = True
    name: str = 'custom'
    rebuild_with_delta: Optional[Callable[[float], 'OperatorSpec']] = field(default=None, repr=False)
    c_at: PointwiseFunction = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.p > 1.0:
            raise InvalidParameterError(f"Invalid exponent p={self.p!r}: need p > 1", p=self.p)
        if not self.alpha > 0.0:
            raise InvalidParameterError(f"Coercivity constant must be > 0, got {self.alpha!r}", alpha=self.alpha)
        if not self.delta >= 0.0:
            raise InvalidParameterError(f"Smoothing delta must be >= 0, got {self.delta!r}", delta=self.delta)
        if self.c_field.mesh.n_nodes != self.f.mesh.n_nodes:
            raise InvalidFieldError("Coefficient c and datum f live on different meshes")
        if self.q_exponent is None:
            object.__setattr__(self, 'q_exponent', default_q_exponent(self.p, self.dimension))
        object.__setattr__(self, 'c_at', field_interpolator(self.c_field))

    @property
    def mesh(self) -> Mesh:
        return self.f.mesh

    @property
    def dimension(self) -> int:
        return self.c_field.mesh.dimension

    @property
    def conjugate_exponent(self) -> float:
        return self.p / (self.p - 1.0)

    @property
    def has_lambda(self) -> bool:
        return self.lambda_term is not None

    def is_compatible(self, rtol: float = COMPATIBILITY_RTOL) -> bool:
        """|int f| <= rtol * ||f||_1; always true with a zero-order term."""
        if self.has_lambda:
            return True
        return abs(self.f.integral()) <= rtol * lp_norm(self.f, 1.0)

    def flux_jacobian(self, x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if self.da_dxi is not None:
            return self.da_dxi(x, s, xi)
        return _fd_flux_jacobian(self.a, x, s, xi)

    def flux_ds(self, x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        if not self.a_depends_on_s:
            return np.zeros_like(xi)
        if self.da_ds is not None:
            return self.da_ds(x, s, xi)
        return _fd_ds(self.a, x, s, xi)

    def convection_ds(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        if self.dphi_ds is not None:
            return self.dphi_ds(x, s)
        return _fd_ds(self.phi, x, s)

    def lambda_ds(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        if self.lambda_term is None:
            return np.zeros_like(s)
        if self.dlambda_ds is not None:
            return self.dlambda_ds(x, s)
        return _fd_ds(self.lambda_term, x, s)

    def with_delta(self, delta: float) -> 'OperatorSpec':
        """Same operator with a different gradient smoothing."""
        if delta == self.delta:
            return self
        if self.rebuild_with_delta is None:
            raise InvalidParameterError(f"Operator {self.name!r} cannot change its smoothing", delta=delta)
        rebuilt = self.rebuild_with_delta(delta)
        return dataclasses.replace(
            rebuilt,
            f=self.f,
            lambda_term=self.lambda_term,
            lambda_profile=self.lambda_profile,
            dlambda_ds=self.dlambda_ds,
            name=self.name,
        )


def with_datum(spec: OperatorSpec, f: DiscreteField) -> OperatorSpec:
    return dataclasses.replace(spec, f=f)


def with_convection(
    spec: OperatorSpec,
    phi: ConvectionFunction,
    dphi_ds: Optional[ConvectionFunction] = None,
) -> OperatorSpec:
    return dataclasses.replace(spec, phi=phi, dphi_ds=dphi_ds, phi_depends_on_s=True, rebuild_with_delta=None)


def with_lambda(
    spec: OperatorSpec,
    lambda_term: ScalarFunction,
    profile: Optional[ProfileFunction] = None,
    dlambda_ds: Optional[ScalarFunction] = None,
) -> OperatorSpec:
    return dataclasses.replace(spec, lambda_term=lambda_term, lambda_profile=profile, dlambda_ds=dlambda_ds)


def _unit_direction(direction: Optional[Sequence[float]], dimension: int) -> np.ndarray:
    if direction is None:
        b = np.zeros(dimension)
        b[0] = 1.0
        return b
    b = np.asarray(direction, dtype=float).reshape(-1)
    norm = float(np.linalg.norm(b))
    if b.shape[0] != dimension or not norm > 0.0:
        raise InvalidParameterError(f"Convection direction must be a nonzero {dimension}-vector", direction=list(b))
    return b / norm


def make_prototype(
    p: float,
    c_field: DiscreteField,
    f: DiscreteField,
    delta: float = 0.0,
    direction: Optional[Sequence[float]] = None,
) -> OperatorSpec:
    """
    Smoothed p-Laplacian with power convection:

        a(x, s, xi) = (delta^2 + |xi|^2)^((p-2)/2) xi
        Phi(x, s)   = c(x) (delta^2 + s^2)^((p-2)/2) s b

    with b a unit direction (e_1 by default).

    Args:
        p: exponent, p > 1
        c_field: nonnegative nodal coefficient c(x)
        f: datum
        delta: gradient smoothing, delta >= 0
        direction: convection direction b

    Returns:
        OperatorSpec with alpha = 1 for p >= 2 or delta = 0, and
        alpha = 2^((p-2)/2) with slack alpha * delta^p otherwise
    """
    if not p > 1.0:
        raise InvalidParameterError(f"Invalid exponent p={p!r}: need p > 1", p=p)
    if not delta >= 0.0:
        raise InvalidParameterError(f"Smoothing delta must be >= 0, got {delta!r}", delta=delta)
    c_values = c_field.nodal_values
    if np.any(c_values < 0.0):
        node = int(np.argmax(c_values < 0.0))
        raise InvalidFieldError(f"Coefficient c must be >= 0 (node {node})", node=node)
    b = _unit_direction(direction, c_field.mesh.dimension)
    c_at = field_interpolator(c_field)

    def a(x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return smoothed_kernel(xi, p, delta)

    def da_dxi(x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return smoothed_kernel_jacobian(xi, p, delta)

    def phi(x: np.ndarray, s: np.ndarray) -> np.ndarray:
        return (c_at(x) * signed_power(s, p, delta))[:, None] * b[None, :]

    def dphi_ds(x: np.ndarray, s: np.ndarray) -> np.ndarray:
        return (c_at(x) * signed_power_derivative(s, p, delta))[:, None] * b[None, :]

    if p >= 2.0 or delta == 0.0:
        alpha, slack = 1.0, 0.0
    else:
        alpha = 2.0 ** (0.5 * (p - 2.0))
        slack = alpha * delta ** p
    if p >= 2.0:
        constant = max(1.0, 2.0 ** (0.5 * (p - 3.0)))
        growth_a0, growth_a1 = constant, constant * delta ** (p - 1.0)
    else:
        growth_a0, growth_a1 = 1.0, 0.0

    return OperatorSpec(
        p=float(p),
        alpha=alpha,
        a=a,
        phi=phi,
        c_field=c_field,
        f=f,
        da_dxi=da_dxi,
        dphi_ds=dphi_ds,
        delta=float(delta),
        coercivity_slack=slack,
        growth_a0=growth_a0,
        growth_a1=growth_a1,
        a_depends_on_s=False,
        phi_depends_on_s=bool(np.any(c_values != 0.0)),
        name='prototype',
        rebuild_with_delta=lambda new_delta: make_prototype(p, c_field, f, new_delta, direction),
    )


@dataclass(frozen=True, slots=True, eq=False)
class RegularizedSpec:
    """
    Operator after approximation at level epsilon:

        a_eps(x, s, xi) = a(x, T_{1/eps}(s), xi) + eps K_delta(xi)
        Phi_eps(x, s)   = T_{1/eps}(Phi(x, s))    (componentwise)

    where K_delta is the smoothed kernel of exponent p. ``epsilon == 0`` is
    the unregularized operator (see ``unregularized``).
    """

    base: OperatorSpec
    epsilon: float
    delta: float
    datum: Optional[DiscreteField] = None

    def __post_init__(self) -> None:
        if not self.epsilon >= 0.0:
            raise InvalidParameterError(f"Regularization epsilon must be >= 0, got {self.epsilon!r}")
        if not self.delta >= 0.0:
            raise InvalidParameterError(f"Smoothing delta must be >= 0, got {self.delta!r}")

    @property
    def p(self) -> float:
        return self.base.p

    @property
    def f(self) -> DiscreteField:
        return self.datum if self.datum is not None else self.base.f

    @property
    def height(self) -> float:
        """Truncation height 1/eps (inf when unregularized)."""
        return math.inf if self.epsilon == 0.0 else 1.0 / self.epsilon

    @property
    def has_lambda(self) -> bool:
        return self.base.has_lambda

    @property
    def is_v_independent(self) -> bool:
        """True when the frozen-coefficient problem does not see v at all."""
        return not (self.base.a_depends_on_s or self.base.phi_depends_on_s)

    def with_datum(self, datum: DiscreteField) -> 'RegularizedSpec':
        return RegularizedSpec(self.base, self.epsilon, self.delta, datum)

    def _truncated(self, s: np.ndarray) -> np.ndarray:
        return np.clip(s, -self.height, self.height)

    def a_eps(self, x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        value = self.base.a(x, self._truncated(s), xi)
        if self.epsilon > 0.0:
            value = value + self.epsilon * smoothed_kernel(xi, self.p, self.delta)
        return value

    def da_eps_dxi(self, x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        jac = self.base.flux_jacobian(x, self._truncated(s), xi)
        if self.epsilon > 0.0:
            jac = jac + self.epsilon * smoothed_kernel_jacobian(xi, self.p, self.delta)
        return jac

    def da_eps_ds(self, x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
        inside = (np.abs(s) < self.height).astype(float)
        return self.base.flux_ds(x, self._truncated(s), xi) * inside[:, None]

    def phi_eps(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.clip(self.base.phi(x, s), -self.height, self.height)

    def dphi_eps_ds(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        raw = self.base.phi(x, s)
        return self.base.convection_ds(x, s) * (np.abs(raw) < self.height)

    def zero_order(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        """eps (delta^2 + s^2)^((p-2)/2) s + lambda(x, T_{1/eps}(s))."""
        value = self.epsilon * signed_power(s, self.p, self.delta)
        if self.base.lambda_term is not None:
            value = value + self.base.lambda_term(x, self._truncated(s))
        return value

    def zero_order_ds(self, x: np.ndarray, s: np.ndarray) -> np.ndarray:
        value = self.epsilon * signed_power_derivative(s, self.p, self.delta) if self.epsilon > 0.0 else np.zeros_like(s)
        if self.base.lambda_term is not None:
            inside = (np.abs(s) < self.height).astype(float)
            value = value + self.base.lambda_ds(x, self._truncated(s)) * inside
        return value


def regularize(
    spec: OperatorSpec,
    epsilon: float,
    delta: Optional[float] = None,
    datum: Optional[DiscreteField] = None,
) -> RegularizedSpec:
    """Approximate operator at level ``epsilon`` > 0; ``delta`` defaults to the operator's."""
    if not epsilon > 0.0:
        raise InvalidParameterError(f"Regularization epsilon must be > 0, got {epsilon!r}", epsilon=epsilon)
    if delta is None:
        delta = spec.delta
    base = spec.with_delta(delta) if spec.rebuild_with_delta is not None else spec
    return RegularizedSpec(base=base, epsilon=float(epsilon), delta=float(delta), datum=datum)


def unregularized(spec: OperatorSpec, datum: Optional[DiscreteField] = None) -> RegularizedSpec:
    """The operator itself, for direct weak solves with bounded data."""
    return RegularizedSpec(base=spec, epsilon=0.0, delta=spec.delta, datum=datum)


def _mean_corrected(field_: DiscreteField) -> DiscreteField:
    return field_.shifted(-field_.integral() / field_.mesh.total_measure)


def project_datum(
    f_raw: Union[DiscreteField, PointwiseFunction],
    mesh: Mesh,
    require_compat: bool = True,
) -> DiscreteField:
    """Nodal projection of a datum, mean-corrected when ``require_compat``."""
    if isinstance(f_raw, DiscreteField):
        if f_raw.mesh is mesh:
            projected = f_raw
        elif f_raw.mesh.n_nodes == mesh.n_nodes and np.array_equal(f_raw.mesh.nodes, mesh.nodes):
            projected = DiscreteField(mesh, f_raw.nodal_values)
        else:
            projected = DiscreteField.sample(mesh, field_interpolator(f_raw))
    elif callable(f_raw):
        projected = DiscreteField.sample(mesh, f_raw)
    else:
        raise InvalidFieldError(f"Unsupported datum of type {type(f_raw).__name__}")
    return _mean_corrected(projected) if require_compat else projected


def prepare_datum(
    f_raw: Union[DiscreteField, PointwiseFunction],
    mesh: Mesh,
    epsilon: float,
    require_compat: bool = True,
) -> DiscreteField:
    """
    Approximate datum f_eps: projection, clamp at +-1/eps, mean correction,
    then rescaling so that ||f_eps||_1 <= ||f||_1 (scaling keeps the mean zero).

    ``||f||_1`` is the norm of the raw projection, before any mean correction.
    """
    if not epsilon > 0.0:
        raise InvalidParameterError(f"Regularization epsilon must be > 0, got {epsilon!r}", epsilon=epsilon)
    projected = project_datum(f_raw, mesh, require_compat=False)
    if not np.any(projected.nodal_values):
        return DiscreteField.constant(mesh, 0.0)
    reference = lp_norm(projected, 1.0)
    height = 1.0 / epsilon
    clamped = projected.with_values(np.clip(projected.nodal_values, -height, height))
    if require_compat:
        clamped = _mean_corrected(clamped)
    norm = lp_norm(clamped, 1.0)
    if norm == 0.0:
        return DiscreteField.constant(mesh, 0.0)
    if norm > reference:
        clamped = clamped.scaled(reference / norm)
    if require_compat:
        clamped = _mean_corrected(clamped)
    if not np.array_equal(clamped.nodal_values, projected.nodal_values):
        logger.debug(f"Datum adjusted at eps={epsilon:g}: ||f||_1={reference:.6g} ||f_eps||_1={lp_norm(clamped, 1.0):.6g}")
    return clamped


@dataclass(frozen=True, slots=True)
class SampleGrid:
    """
    Sample points for the assumption validator.

    ``node_indices`` selects mesh nodes as x points (``None``: up to
    ``max_points`` evenly spread nodes); directions are the coordinate axes,
    their negatives and ``n_directions`` seeded random unit vectors.
    """

    node_indices: Optional[tuple[int, ...]] = None
    s_levels: tuple[float, ...] = (-8.0, -2.0, -0.5, 0.0, 0.5, 2.0, 8.0)
    xi_magnitudes: tuple[float, ...] = (0.0, 1e-3, 0.1, 1.0, 10.0)
    n_directions: int = 2
    seed: int = 0
    max_points: int = 9

    def __post_init__(self) -> None:
        if not self.s_levels or not self.xi_magnitudes:
            raise InvalidParameterError("Sample grid needs s levels and xi magnitudes")
        if self.node_indices is not None and len(self.node_indices) == 0:
            raise InvalidParameterError("Sample grid needs at least one point")

    def points(self, mesh: Mesh) -> np.ndarray:
        if self.node_indices is not None:
            return mesh.nodes[list(self.node_indices)]
        count = min(self.max_points, mesh.n_nodes)
        picks = np.unique(np.linspace(0, mesh.n_nodes - 1, count).round().astype(int))
        return mesh.nodes[picks]

    def directions(self, dimension: int) -> np.ndarray:
        axes = np.eye(dimension)
        rows = [axes, -axes]
        if dimension > 1 and self.n_directions > 0:
            rng = np.random.default_rng(self.seed)
            random = rng.normal(size=(self.n_directions, dimension))
            rows.append(random / np.linalg.norm(random, axis=1, keepdims=True))
        return np.vstack(rows)

    def gradients(self, dimension: int) -> np.ndarray:
        """All sampled xi vectors (the zero vector once)."""
        dirs = self.directions(dimension)
        vectors = [np.zeros((1, dimension))] if 0.0 in self.xi_magnitudes else []
        for magnitude in self.xi_magnitudes:
            if magnitude != 0.0:
                vectors.append(magnitude * dirs)
        return np.vstack(vectors)


@dataclass(frozen=True, slots=True)
class AssumptionCheck:
    """One sampled inequality: pass flag, smallest margin and where it occurred."""

    name: str
    passed: bool
    margin: float
    witness: dict[str, Any]
    detail: str = ''

    def to_dict(self) -> dict[str, Any]:
        return {
            'name': self.name,
            'passed': self.passed,
            'margin': self.margin if math.isfinite(self.margin) else None,
            'witness': self.witness,
            'detail': self.detail,
        }


@dataclass(frozen=True, slots=True)
class AssumptionReport:
    operator: str
    p: float
    dimension: int
    q_exponent: float
    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def get(self, name: str) -> AssumptionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [check.name for check in self.checks if not check.passed]

    def to_dict(self) -> dict[str, Any]:
        return {
            'operator': self.operator,
            'p': self.p,
            'dimension': self.dimension,
            'q_exponent': self.q_exponent if math.isfinite(self.q_exponent) else 'inf',
            'passed': self.passed,
            'checks': [check.to_dict() for check in self.checks],
        }


def _witness(x: np.ndarray, s: float, **vectors: np.ndarray) -> dict[str, Any]:
    out: dict[str, Any] = {'x': [float(v) for v in x], 's': float(s)}
    for key, value in vectors.items():
        out[key] = [float(v) for v in np.atleast_1d(value)]
    return out


def _sampled_check(
    name: str,
    margins: np.ndarray,
    scales: np.ndarray,
    witness_at: Callable[[int], dict[str, Any]],
    detail: str = '',
    strict: bool = False,
) -> AssumptionCheck:
    worst = int(np.argmin(margins))
    if strict:
        passed = bool(np.all(margins > 0.0))
    else:
        passed = bool(np.all(margins >= -CHECK_RTOL * np.maximum(1.0, scales)))
    return AssumptionCheck(name, passed, float(margins[worst]), witness_at(worst), detail)


def validate_assumptions(spec: OperatorSpec, grid: Optional[SampleGrid] = None) -> AssumptionReport:
    """
    Check the structural inequalities of ``spec`` at every grid tuple.

    Failures are report entries, never exceptions.
    """
    grid = grid or SampleGrid()
    dim = spec.dimension
    p = spec.p
    points = grid.points(spec.c_field.mesh)
    s_levels = np.asarray(grid.s_levels, dtype=float)
    xis = grid.gradients(dim)

    if p > dim:
        logger.warning(f"p={p:g} exceeds the space dimension {dim}; estimates are stated for p <= N")
    logger.info(f"Summability exponent of c (metadata only): q={spec.q_exponent}")

    # tuples (x, s, xi) flattened
    n_x, n_s, n_xi = points.shape[0], s_levels.size, xis.shape[0]
    X = np.repeat(points, n_s * n_xi, axis=0)
    S = np.tile(np.repeat(s_levels, n_xi), n_x)
    XI = np.tile(xis, (n_x * n_s, 1))
    A = spec.a(X, S, XI)
    xi_norm = np.linalg.norm(XI, axis=1)
    a_dot = np.einsum('ij,ij->i', A, XI)

    checks: list[AssumptionCheck] = []
    lower = spec.alpha * xi_norm ** p - spec.coercivity_slack
    nonzero = xi_norm > 0.0
    measured_alpha = float(np.min((a_dot[nonzero] + spec.coercivity_slack) / xi_norm[nonzero] ** p)) if np.any(nonzero) else math.nan
    checks.append(_sampled_check(
        'coercivity',
        a_dot - lower,
        np.abs(lower),
        lambda i: _witness(X[i], S[i], xi=XI[i]),
        detail=f"alpha={spec.alpha:.6g} slack={spec.coercivity_slack:.3g} measured_alpha={measured_alpha:.6g}",
    ))

    # monotonicity on all pairs of sampled gradients at every (x, s)
    A3 = A.reshape(n_x * n_s, n_xi, dim)
    XI3 = XI.reshape(n_x * n_s, n_xi, dim)
    i_idx, j_idx = np.triu_indices(n_xi, k=1)
    da = A3[:, i_idx, :] - A3[:, j_idx, :]
    dxi = XI3[:, i_idx, :] - XI3[:, j_idx, :]
    mono = np.einsum('tpk,tpk->tp', da, dxi)
    distinct = np.linalg.norm(dxi, axis=2) > 0.0
    mono_margins = np.where(distinct, mono, np.inf).ravel()
    n_pairs = i_idx.size

    def mono_witness(flat: int) -> dict[str, Any]:
        t, pair = divmod(flat, n_pairs)
        row = t * n_xi
        return _witness(X[row], S[row], xi=XI3[t, i_idx[pair]], eta=XI3[t, j_idx[pair]])

    # strict on pairs with xi != eta; equal pairs carry an infinite margin
    checks.append(_sampled_check('monotonicity', mono_margins, np.abs(mono).ravel(), mono_witness, strict=True))

    a_norm = np.linalg.norm(A, axis=1)
    bound = spec.growth_a0 * (xi_norm ** (p - 1.0) + np.abs(S) ** (p - 1.0)) + spec.growth_a1
    checks.append(_sampled_check(
        'growth',
        bound - a_norm,
        bound,
        lambda i: _witness(X[i], S[i], xi=XI[i]),
        detail=f"a0={spec.growth_a0:.6g} a1={spec.growth_a1:.6g}",
    ))

    XS = np.repeat(points, n_s, axis=0)
    SS = np.tile(s_levels, n_x)
    phi_norm = np.linalg.norm(spec.phi(XS, SS), axis=1)
    phi_bound = spec.c_at(XS) * (1.0 + np.abs(SS) ** (p - 1.0))
    checks.append(_sampled_check(
        'convection_growth',
        phi_bound - phi_norm,
        phi_bound,
        lambda i: _witness(XS[i], SS[i]),
    ))

    if spec.lambda_term is None:
        integral = abs(spec.f.integral())
        allowed = COMPATIBILITY_RTOL * lp_norm(spec.f, 1.0)
        checks.append(AssumptionCheck(
            'compatibility',
            integral <= allowed,
            allowed - integral,
            {'integral': integral},
        ))
    else:
        checks.extend(_lambda_checks(spec, XS, SS, s_levels))

    report = AssumptionReport(spec.name, p, dim, float(spec.q_exponent), tuple(checks))
    for check in report.checks:
        log = logger.info if check.passed else logger.warning
        log(f"assumption {check.name}: {'pass' if check.passed else 'FAIL'} margin={check.margin:.3e}")
    return report


def _lambda_checks(spec: OperatorSpec, XS: np.ndarray, SS: np.ndarray, s_levels: np.ndarray) -> list[AssumptionCheck]:
    lam = np.asarray(spec.lambda_term(XS, SS), dtype=float)
    checks = [_sampled_check(
        'lambda_sign',
        lam * SS,
        np.abs(lam * SS),
        lambda i: _witness(XS[i], SS[i]),
    )]

    levels = np.unique(np.abs(s_levels[s_levels != 0.0]))
    # informational: the sampled c_k table; only a non-finite c_k fails
    bounds = {float(k): float(np.max(np.abs(lam[np.abs(SS) <= k]))) for k in levels}
    unbounded = [k for k, v in bounds.items() if not math.isfinite(v)]
    witness: dict[str, Any] = {'c_k': {f"{k:g}": (v if math.isfinite(v) else None) for k, v in bounds.items()}}
    if unbounded:
        witness['unbounded_at_k'] = unbounded[0]
    checks.append(AssumptionCheck(
        'lambda_bound',
        not unbounded,
        math.nan,
        witness,
        detail='sup |lambda(x, s)| over |s| <= k at the sampled points',
    ))

    if spec.lambda_profile is None:
        checks.append(AssumptionCheck('lambda_coercivity', False, -math.inf, {}, detail='no coercivity profile g'))
        return checks
    g = np.asarray(spec.lambda_profile(SS), dtype=float)
    margins = np.abs(lam) - g
    check = _sampled_check('lambda_coercivity', margins, g, lambda i: _witness(XS[i], SS[i]))
    # g must grow towards both infinities on the sampled levels; sides ordered by |s|
    pos = np.sort(s_levels[s_levels > 0.0])
    neg = -np.sort(-s_levels[s_levels < 0.0])
    growing = True
    for side in (pos, neg):
        if side.size >= 2:
            prof = np.asarray(spec.lambda_profile(side), dtype=float)
            growing = growing and bool(prof[-1] > prof[0])
    if not growing:
        check = dataclasses.replace(check, passed=False, detail='profile g does not grow with |s|')
    checks.append(check)
    return checks
