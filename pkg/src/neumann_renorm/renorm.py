#!/usr/bin/env python3
"""
Epsilon-continuation towards a renormalized solution, the a priori estimate
diagnostics, the stability harness and the weak-solution saturation check.

Convergence is monitored on truncates T_k(u_eps) rather than on u_eps: for
small p the untruncated field need not settle in any norm.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Union

import numpy as np

from .calculus import (
    distribution_measure,
    lp_norm,
    median,
    nodal_gap,
    poincare_ratio,
    truncate_field,
    w1p_distance,
    w1p_seminorm,
)
from .errors import InvalidParameterError, NeumannError, StageError, ValidationError
from .logs import log_stage
from .mesh import DiscreteField, Mesh, quadrature_rule
from .model import (
    ConvectionFunction,
    OperatorSpec,
    RegularizedSpec,
    SampleGrid,
    prepare_datum,
    regularize,
    with_convection,
    with_datum,
)
from .solver import SolveOptions, WeakSolution, fixed_point_solve, zero_order_solve

logger = logging.getLogger(__name__)

DELTA_MODES = ('fixed', 'coupled')
SATURATION_RTOL = 1e-6

Curve = tuple[tuple[float, float], ...]


def _strictly_increasing_positive(values: Sequence[float]) -> bool:
    return all(v > 0.0 for v in values) and all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True, slots=True)
class ContinuationSchedule:
    """
    Epsilon levels and monitoring heights.

    Attributes:
        epsilons: strictly decreasing positive levels
        k_levels: truncation heights monitored for convergence
        n_levels: heights of the energy and flux decay curves
        a_levels: heights A of the measure decay curve
        stop_tol: W^{1,p} distance between successive truncates declaring convergence
        delta_mode: 'fixed' keeps the operator's delta, 'coupled' uses delta = eps
        warm_start: seed every stage with the previous stage's field
    """

    epsilons: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5)
    k_levels: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0, 8.0)
    n_levels: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    a_levels: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
    stop_tol: float = 1e-4
    delta_mode: str = 'fixed'
    warm_start: bool = True

    def __post_init__(self) -> None:
        if not self.epsilons:
            raise InvalidParameterError("Continuation schedule has no epsilon levels")
        eps = self.epsilons
        if not all(e > 0.0 for e in eps) or not all(b < a for a, b in zip(eps, eps[1:])):
            raise InvalidParameterError(f"epsilons must be positive and strictly decreasing: {list(eps)}")
        for name in ('k_levels', 'n_levels', 'a_levels'):
            values = getattr(self, name)
            if not values or not _strictly_increasing_positive(values):
                raise InvalidParameterError(f"{name} must be positive and strictly increasing: {list(values)}")
        if not self.stop_tol > 0.0:
            raise InvalidParameterError(f"stop_tol must be > 0, got {self.stop_tol!r}")
        if self.delta_mode not in DELTA_MODES:
            raise InvalidParameterError(f"Unknown delta_mode {self.delta_mode!r}")

    @property
    def final_epsilon(self) -> float:
        return self.epsilons[-1]

    def delta_for(self, spec: OperatorSpec, epsilon: float) -> float:
        return epsilon if self.delta_mode == 'coupled' else spec.delta


@dataclass(frozen=True, slots=True, eq=False)
class EstimateReport:
    """
    Measured a priori quantities of one stage field.

    Attributes:
        truncation_energy: (k, int |grad T_k u|^p, ratio to k + k^p)
        m_hat: largest truncation ratio, the measured constant M
        log_estimate: int |grad u|^p / (1 + |u|)^p
        log_bound: right-hand side of the logarithmic estimate
        measure_decay: (A, meas{|u| > A} ln(1 + A))
        poincare_ratio: 'field' and per-k ratios ||w - med w||_p / ||grad w||_p
        energy_decay: (n, (1/n) int_{|u|<n} a(x,u,grad u).grad u)
        flux_decay: (n, (1/n) int |Phi(x,u)| |grad T_n u|)
    """

    epsilon: float
    mesh_tag: str
    p: float
    truncation_energy: tuple[tuple[float, float, float], ...]
    m_hat: float
    log_estimate: float
    log_bound: float
    measure_decay: Curve
    poincare_ratio: dict[str, float]
    energy_decay: Curve
    flux_decay: Curve

    def curves(self) -> dict[str, Curve]:
        """Flat (parameter, value) curves, one CSV each."""
        return {
            'truncation_energy': tuple((k, e) for k, e, _ in self.truncation_energy),
            'truncation_ratio': tuple((k, r) for k, _, r in self.truncation_energy),
            'measure_decay': self.measure_decay,
            'energy_decay': self.energy_decay,
            'flux_decay': self.flux_decay,
        }

    def summary(self) -> dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'mesh': self.mesh_tag,
            'p': self.p,
            'm_hat': self.m_hat,
            'log_estimate': self.log_estimate,
            'log_bound': self.log_bound,
            'poincare_ratio': dict(self.poincare_ratio),
            'truncation_energy': [{'k': k, 'energy': e, 'ratio': r} for k, e, r in self.truncation_energy],
            'measure_decay': [list(point) for point in self.measure_decay],
            'energy_decay': [list(point) for point in self.energy_decay],
            'flux_decay': [list(point) for point in self.flux_decay],
        }


@dataclass(frozen=True, slots=True, eq=False)
class ContinuationStage:
    epsilon: float
    delta: float
    rspec: RegularizedSpec
    solution: WeakSolution
    estimates: EstimateReport

    @property
    def field(self) -> DiscreteField:
        return self.solution.field

    def to_dict(self) -> dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'delta': self.delta,
            'median': median(self.field),
            'nodal_gap': nodal_gap(self.field),
            'datum_l1': lp_norm(self.rspec.f, 1.0),
            'datum_integral': self.rspec.f.integral(),
            'solution': self.solution.to_dict(),
            'estimates': self.estimates.summary(),
        }


@dataclass(frozen=True, slots=True, eq=False)
class RenormSolution:
    """
    Epsilon-indexed family of discrete solutions, in schedule order.

    ``truncation_distances[k]`` holds the W^{1,p} distances between T_k of
    consecutive stage fields.
    """

    stages: tuple[ContinuationStage, ...]
    truncation_distances: dict[float, tuple[float, ...]]
    converged: bool
    schedule: ContinuationSchedule

    @property
    def final_field(self) -> DiscreteField:
        return self.stages[-1].field

    @property
    def final_stage(self) -> ContinuationStage:
        return self.stages[-1]

    def m_hat_by_epsilon(self) -> dict[float, float]:
        return {stage.epsilon: stage.estimates.m_hat for stage in self.stages}

    def to_dict(self) -> dict[str, Any]:
        return {
            'converged': self.converged,
            'epsilons': [stage.epsilon for stage in self.stages],
            'truncation_distances': {f"{k:g}": list(d) for k, d in self.truncation_distances.items()},
            'stages': [stage.to_dict() for stage in self.stages],
        }


def _solve_stage(
    mesh: Mesh,
    spec: OperatorSpec,
    epsilon: float,
    delta: float,
    options: SolveOptions,
    initial: Optional[DiscreteField],
) -> tuple[RegularizedSpec, WeakSolution]:
    datum = prepare_datum(spec.f, mesh, epsilon, require_compat=not spec.has_lambda)
    rspec = regularize(spec, epsilon, delta, datum=datum)
    if spec.has_lambda:
        return rspec, zero_order_solve(mesh, rspec, options, initial)
    return rspec, fixed_point_solve(mesh, rspec, options, initial)


def epsilon_continuation(
    mesh: Mesh,
    spec: OperatorSpec,
    schedule: Optional[ContinuationSchedule] = None,
    options: Optional[SolveOptions] = None,
) -> RenormSolution:
    """
    Solve the approximate problems along the schedule.

    Each stage regularizes the operator, prepares f_eps and runs the Picard
    solve (warm-started from the previous stage); truncation distances between
    consecutive stages decide ``converged``.

    Raises:
        StageError: a stage failed; carries eps and the wrapped error's exit code
    """
    schedule = schedule or ContinuationSchedule()
    options = options or SolveOptions()
    stages: list[ContinuationStage] = []
    previous: Optional[DiscreteField] = None
    for epsilon in schedule.epsilons:
        delta = schedule.delta_for(spec, epsilon)
        with log_stage(f"EPS_{epsilon:.0e}"):
            try:
                rspec, solution = _solve_stage(
                    mesh, spec, epsilon, delta, options, previous if schedule.warm_start else None,
                )
            except NeumannError as exc:
                logger.error(f"Stage eps={epsilon:g} failed: {exc.message}")
                raise StageError(epsilon, exc) from exc
            estimates = apriori_report(solution.field, rspec, schedule)
            logger.info(
                f"stage eps={epsilon:g} picard={solution.iterations} "
                f"m_hat={estimates.m_hat:.4g} median={solution.median:.3g}"
            )
        stages.append(ContinuationStage(epsilon, delta, rspec, solution, estimates))
        previous = solution.field

    distances: dict[float, tuple[float, ...]] = {}
    for k in schedule.k_levels:
        distances[k] = tuple(
            w1p_distance(truncate_field(a.field, k), truncate_field(b.field, k), spec.p)
            for a, b in zip(stages, stages[1:])
        )
    converged = len(stages) >= 2 and all(d[-1] <= schedule.stop_tol for d in distances.values())
    logger.info(f"Continuation over {len(stages)} stages: converged={converged}")
    return RenormSolution(tuple(stages), distances, converged, schedule)


def _energy_density(field_: DiscreteField, rspec: RegularizedSpec, order: int) -> tuple[np.ndarray, np.ndarray]:
    """a_eps(x, u, grad u).grad u and u at quadrature points, shape (m, q)."""
    mesh = field_.mesh
    rule = quadrature_rule(mesh.dimension, order)
    X = mesh.quadrature_points(rule).reshape(-1, mesh.dimension)
    U = field_.at_quadrature(rule).reshape(-1)
    G = np.repeat(field_.gradients(), rule.size, axis=0)
    density = np.einsum('ij,ij->i', rspec.a_eps(X, U, G), G)
    return density.reshape(mesh.n_elements, rule.size), U.reshape(mesh.n_elements, rule.size)


def energy_decay_profile(
    field_: DiscreteField,
    rspec: RegularizedSpec,
    n_levels: Sequence[float],
    order: int = 4,
) -> Curve:
    """
    n -> (1/n) int_{|u| < n} a(x, u, grad u).grad u, the indicator tested at
    quadrature points.
    """
    if not n_levels:
        raise InvalidParameterError("n_levels must not be empty")
    if not _strictly_increasing_positive(list(n_levels)):
        raise InvalidParameterError(f"n_levels must be positive and strictly increasing: {list(n_levels)}")
    density, U = _energy_density(field_, rspec, order)
    weights = field_.mesh.quadrature_weights(quadrature_rule(field_.mesh.dimension, order))
    return tuple(
        (float(n), float(np.sum(weights * density * (np.abs(U) < n))) / n)
        for n in n_levels
    )


def flux_decay_profile(
    field_: DiscreteField,
    rspec: RegularizedSpec,
    n_levels: Sequence[float],
    order: int = 4,
) -> Curve:
    """n -> (1/n) int |Phi_eps(x, u)| |grad T_n(u)|."""
    mesh = field_.mesh
    rule = quadrature_rule(mesh.dimension, order)
    X = mesh.quadrature_points(rule).reshape(-1, mesh.dimension)
    U = field_.at_quadrature(rule).reshape(-1)
    phi = np.linalg.norm(rspec.phi_eps(X, U), axis=1).reshape(mesh.n_elements, rule.size)
    weights = mesh.quadrature_weights(rule)
    curve = []
    for n in n_levels:
        grad = np.linalg.norm(truncate_field(field_, n).gradients(), axis=1)
        curve.append((float(n), float(np.sum(weights * phi * grad[:, None])) / n))
    return tuple(curve)


def log_estimate_bound(rspec: RegularizedSpec) -> float:
    """
    Right-hand side of int |grad u|^p / (1 + |u|)^p <= bound, from testing
    with Psi_p(u) and Young's inequality against |Phi| <= C0 c (1 + |u|)^{p-1}:

        bound = (2 / alpha) (||f||_1 / (p - 1) + slack meas + C0^{p'} ||c||_{p'}^{p'} / (p' eta^{p'}))

    with eta^p = p alpha / 2.
    """
    spec = rspec.base
    p = spec.p
    pc = spec.conjugate_exponent
    alpha = spec.alpha
    c0 = max(1.0, rspec.delta) ** (p - 1.0) if p >= 2.0 else 1.0
    eta_pc = (p * alpha / 2.0) ** (1.0 / (p - 1.0))
    c_term = c0 ** pc * lp_norm(spec.c_field, pc) ** pc / (pc * eta_pc)
    f_term = lp_norm(rspec.f, 1.0) / (p - 1.0)
    slack = spec.coercivity_slack * spec.mesh.total_measure
    return 2.0 / alpha * (f_term + slack + c_term)


def _log_estimate(field_: DiscreteField, p: float, order: int) -> float:
    mesh = field_.mesh
    rule = quadrature_rule(mesh.dimension, order)
    weights = mesh.quadrature_weights(rule)
    grad = np.linalg.norm(field_.gradients(), axis=1) ** p
    damping = (1.0 + np.abs(field_.at_quadrature(rule))) ** (-p)
    return float(np.sum(weights * damping * grad[:, None]))


def apriori_report(
    stage_field: DiscreteField,
    rspec: RegularizedSpec,
    schedule: Optional[ContinuationSchedule] = None,
    order: int = 4,
) -> EstimateReport:
    """All estimate curves of one stage field."""
    schedule = schedule or ContinuationSchedule()
    p = rspec.p
    energies = []
    for k in schedule.k_levels:
        energy = w1p_seminorm(truncate_field(stage_field, k), p) ** p
        energies.append((float(k), energy, energy / (k + k ** p)))
    ratios = {'field': poincare_ratio(stage_field, p)}
    for k in schedule.k_levels:
        ratios[f"k={k:g}"] = poincare_ratio(truncate_field(stage_field, k), p)
    measure = tuple(
        (float(a), distribution_measure(stage_field, a) * math.log1p(a))
        for a in schedule.a_levels
    )
    return EstimateReport(
        epsilon=rspec.epsilon,
        mesh_tag=stage_field.mesh.tag,
        p=p,
        truncation_energy=tuple(energies),
        m_hat=max(r for _, _, r in energies),
        log_estimate=_log_estimate(stage_field, p, order),
        log_bound=log_estimate_bound(rspec),
        measure_decay=measure,
        poincare_ratio=ratios,
        energy_decay=energy_decay_profile(stage_field, rspec, schedule.n_levels, order),
        flux_decay=flux_decay_profile(stage_field, rspec, schedule.n_levels, order),
    )


@dataclass(frozen=True, slots=True, eq=False)
class DataMember:
    """One (f_j, Phi_j) of a stability sequence; ``phi=None`` keeps the operator's Phi."""

    f: DiscreteField
    phi: Optional[ConvectionFunction] = None
    dphi_ds: Optional[ConvectionFunction] = None
    label: str = ''


@dataclass(frozen=True, slots=True)
class StabilityRow:
    label: str
    truncate_distances: tuple[tuple[float, float], ...]
    lp_distance: float
    iterations: int

    def distance(self, k: float) -> float:
        for level, value in self.truncate_distances:
            if level == k:
                return value
        raise KeyError(k)

    def to_dict(self) -> dict[str, Any]:
        return {
            'label': self.label,
            'truncate_distances': {f"{k:g}": d for k, d in self.truncate_distances},
            'lp_distance': self.lp_distance,
            'iterations': self.iterations,
        }


@dataclass(frozen=True, slots=True)
class StabilityTable:
    epsilon: float
    k_levels: tuple[float, ...]
    rows: tuple[StabilityRow, ...]

    def column(self, k: float) -> list[float]:
        return [row.distance(k) for row in self.rows]

    def curves(self) -> dict[str, Curve]:
        """Per k: member index -> truncate distance."""
        return {
            f"stability_k{k:g}": tuple((float(i + 1), row.distance(k)) for i, row in enumerate(self.rows))
            for k in self.k_levels
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'k_levels': list(self.k_levels),
            'rows': [row.to_dict() for row in self.rows],
        }


def _member_spec(spec: OperatorSpec, member: DataMember) -> OperatorSpec:
    member_spec = with_datum(spec, member.f)
    if member.phi is not None:
        member_spec = with_convection(member_spec, member.phi, member.dphi_ds)
    return member_spec


def _check_member_growth(spec: OperatorSpec, member_spec: OperatorSpec, index: int, label: str) -> None:
    grid = SampleGrid()
    points = grid.points(spec.c_field.mesh)
    s = np.asarray(grid.s_levels, dtype=float)
    X = np.repeat(points, s.size, axis=0)
    S = np.tile(s, points.shape[0])
    value = np.linalg.norm(member_spec.phi(X, S), axis=1)
    bound = spec.c_at(X) * (1.0 + np.abs(S) ** (spec.p - 1.0))
    excess = value - bound
    if np.any(excess > 1e-12 * np.maximum(1.0, bound)):
        i = int(np.argmax(excess))
        raise ValidationError(
            f"Stability member {index} ({label}) violates the convection growth bound",
            member=index,
            label=label,
            x=[float(c) for c in X[i]],
            s=float(S[i]),
        )


def stability_experiment(
    mesh: Mesh,
    spec: OperatorSpec,
    data_sequence: Sequence[DataMember],
    reference: Optional[DataMember] = None,
    schedule: Optional[ContinuationSchedule] = None,
    options: Optional[SolveOptions] = None,
) -> StabilityTable:
    """
    Solve every member and the reference at the schedule's final epsilon and
    tabulate W^{1,p} distances of truncates to the reference, plus L^p
    distances of the fields. Members run sequentially in input order.

    Raises:
        ValidationError: a member's Phi_j exceeds c(x)(1 + |s|^{p-1}); names the member
    """
    schedule = schedule or ContinuationSchedule()
    options = options or SolveOptions()
    reference = reference or DataMember(spec.f, label='reference')
    members = list(data_sequence)
    specs = []
    for j, member in enumerate(members, start=1):
        member_spec = _member_spec(spec, member)
        _check_member_growth(spec, member_spec, j, member.label or f"member {j}")
        specs.append(member_spec)

    epsilon = schedule.final_epsilon
    delta = schedule.delta_for(spec, epsilon)
    with log_stage('MEMBER_ref'):
        _, ref_solution = _solve_stage(mesh, _member_spec(spec, reference), epsilon, delta, options, None)
    ref_field = ref_solution.field
    rows = []
    for j, (member, member_spec) in enumerate(zip(members, specs), start=1):
        with log_stage(f"MEMBER_{j}"):
            _, solution = _solve_stage(mesh, member_spec, epsilon, delta, options, None)
        distances = tuple(
            (float(k), w1p_distance(truncate_field(solution.field, k), truncate_field(ref_field, k), spec.p))
            for k in schedule.k_levels
        )
        rows.append(StabilityRow(
            label=member.label or f"member {j}",
            truncate_distances=distances,
            lp_distance=lp_norm(solution.field - ref_field, spec.p),
            iterations=solution.iterations,
        ))
        logger.info(f"member {j}: d(k={schedule.k_levels[-1]:g})={distances[-1][1]:.4e}")
    return StabilityTable(epsilon, tuple(float(k) for k in schedule.k_levels), tuple(rows))


@dataclass(frozen=True, slots=True)
class UpgradeCheck:
    saturated: bool
    energies: Curve
    growth: float

    def to_dict(self) -> dict[str, Any]:
        return {
            'saturated': self.saturated,
            'growth': self.growth if math.isfinite(self.growth) else None,
            'energies': [list(point) for point in self.energies],
        }


def weak_upgrade_check(
    sol: Union[RenormSolution, DiscreteField],
    rspec: RegularizedSpec,
    k_list: Sequence[float],
) -> UpgradeCheck:
    """
    E(k) = int |grad T_k u|^p along ``k_list``; saturated when
    E(k_max) / E(k_max / 2) - 1 <= 1e-6, the discrete sign that u is a
    W^{1,p} function. The zero field counts as saturated.
    """
    if len(k_list) < 2:
        raise InvalidParameterError("k_list needs at least two levels")
    if not _strictly_increasing_positive(list(k_list)):
        raise InvalidParameterError(f"k_list must be positive and strictly increasing: {list(k_list)}")
    field_ = sol.final_field if isinstance(sol, RenormSolution) else sol
    p = rspec.p
    energies = tuple((float(k), w1p_seminorm(truncate_field(field_, k), p) ** p) for k in k_list)
    top = energies[-1][1]
    half = w1p_seminorm(truncate_field(field_, k_list[-1] / 2.0), p) ** p
    if half == 0.0:
        growth = 0.0 if top == 0.0 else math.inf
    else:
        growth = top / half - 1.0
    saturated = growth <= SATURATION_RTOL
    logger.info(f"weak upgrade: E(k_max)={top:.6g} growth={growth:.3e} saturated={saturated}")
    return UpgradeCheck(saturated, energies, growth)
