#!/usr/bin/env python3
"""
Scalar calculus on P1 fields: truncation, median, norms, level-set measure
and the logarithmic transform used by the a priori estimates.
"""

import logging
import math
from typing import Optional, Union

import numpy as np

from .errors import InvalidParameterError
from .mesh import DEFAULT_QUADRATURE_ORDER, DiscreteField, quadrature_rule

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Relative slack when comparing cumulative weights against meas(Omega)/2.
_MEDIAN_RTOL = 1e-12
DISTRIBUTION_METHODS = ('exact', 'quadrature')


def _check_level(k: float) -> None:
    if not k >= 0.0:
        raise InvalidParameterError(f"Truncation level must be >= 0, got {k!r}", k=k)


def truncate(s: ArrayLike, k: float) -> ArrayLike:
    """T_k(s) = min(k, max(s, -k)); accepts scalars or arrays."""
    _check_level(k)
    if np.ndim(s) == 0:
        return float(min(k, max(float(s), -k)))
    return np.clip(np.asarray(s, dtype=float), -k, k)


def truncate_field(field: DiscreteField, k: float) -> DiscreteField:
    """Nodal clamp of a P1 field, which keeps the truncate in the P1 space."""
    _check_level(k)
    return field.with_values(np.clip(field.nodal_values, -k, k))


def cutoff(s: ArrayLike, n: float) -> ArrayLike:
    """
    Piecewise-linear cut-off h_n: 1 on |s| <= n, linear down to 0 on
    n < |s| <= 2n, and 0 beyond.
    """
    if not n > 0.0:
        raise InvalidParameterError(f"Cut-off level must be > 0, got {n!r}", n=n)
    values = np.clip((2.0 * n - np.abs(np.asarray(s, dtype=float))) / n, 0.0, 1.0)
    return float(values) if np.ndim(s) == 0 else values


def weighted_median(values: np.ndarray, weights: np.ndarray, strict: bool = False) -> float:
    """
    sup{t : W{values > t} >= W/2} for point masses ``weights`` at ``values``.

    With ``strict`` the condition is W{values > t} > W/2 instead.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise InvalidParameterError("Median of an empty set")
    order = np.argsort(values, kind='stable')
    unique, start = np.unique(values[order], return_index=True)
    mass = np.add.reduceat(weights[order], start)
    # tail[j] = weight of {values >= unique[j]} = W{values > t} for t just below unique[j]
    tail = np.cumsum(mass[::-1])[::-1]
    half = 0.5 * float(np.sum(weights))
    if strict:
        admissible = np.nonzero(tail > half * (1.0 + _MEDIAN_RTOL))[0]
    else:
        admissible = np.nonzero(tail >= half * (1.0 - _MEDIAN_RTOL))[0]
    return float(unique[admissible[-1]])


def median(field: DiscreteField, strict: bool = False) -> float:
    """Median with respect to the lumped node measures."""
    return weighted_median(field.nodal_values, field.lumped_node_measures, strict=strict)


def median_node(field: DiscreteField, strict: bool = False) -> int:
    """Lowest-index node carrying the median value."""
    value = median(field, strict=strict)
    return int(np.flatnonzero(field.nodal_values == value)[0])


def nodal_gap(field: DiscreteField) -> float:
    """Largest gap between consecutive distinct nodal values (0 for a constant)."""
    unique = np.unique(field.nodal_values)
    if unique.size < 2:
        return 0.0
    return float(np.max(np.diff(unique)))


def _check_exponent(p: float) -> None:
    if not (p >= 1.0):
        raise InvalidParameterError(f"Exponent must be >= 1, got {p!r}", p=p)


def lp_norm(field: DiscreteField, p: float, order: int = DEFAULT_QUADRATURE_ORDER) -> float:
    """L^p norm by element quadrature (p = inf gives the nodal maximum)."""
    _check_exponent(p)
    if math.isinf(p):
        return float(np.max(np.abs(field.nodal_values)))
    mesh = field.mesh
    rule = quadrature_rule(mesh.dimension, order)
    values = np.abs(field.at_quadrature(rule)) ** p
    return float(np.sum(values * mesh.quadrature_weights(rule)) ** (1.0 / p))


def w1p_seminorm(field: DiscreteField, p: float) -> float:
    """||grad u||_{L^p}; the gradient is constant per element."""
    _check_exponent(p)
    magnitude = np.linalg.norm(field.gradients(), axis=1)
    if math.isinf(p):
        return float(np.max(magnitude))
    return float(np.dot(field.mesh.element_measures, magnitude ** p) ** (1.0 / p))


def w1p_norm(field: DiscreteField, p: float, order: int = DEFAULT_QUADRATURE_ORDER) -> float:
    if math.isinf(p):
        return max(lp_norm(field, p), w1p_seminorm(field, p))
    return (lp_norm(field, p, order) ** p + w1p_seminorm(field, p) ** p) ** (1.0 / p)


def w1p_distance(u: DiscreteField, v: DiscreteField, p: float) -> float:
    return w1p_norm(u - v, p)


def _interval_fraction_above(values: np.ndarray, t: float) -> np.ndarray:
    u0, u1 = values[:, 0], values[:, 1]
    spread = np.abs(u1 - u0)
    flat = spread == 0.0
    with np.errstate(divide='ignore', invalid='ignore'):
        sloped = np.clip((np.maximum(u0, u1) - t) / spread, 0.0, 1.0)
    return np.where(flat, (u0 > t).astype(float), sloped)


def _triangle_fraction_above(values: np.ndarray, t: float) -> np.ndarray:
    a, b, c = np.sort(values, axis=1).T
    out = np.zeros(a.shape)
    out[t < a] = 1.0
    with np.errstate(divide='ignore', invalid='ignore'):
        lower = (a <= t) & (t < b)
        out[lower] = 1.0 - (t - a[lower]) ** 2 / ((b[lower] - a[lower]) * (c[lower] - a[lower]))
        upper = (b <= t) & (t < c)
        out[upper] = (c[upper] - t) ** 2 / ((c[upper] - a[upper]) * (c[upper] - b[upper]))
    return out


def _fraction_above(values: np.ndarray, t: float) -> np.ndarray:
    if values.shape[1] == 2:
        return _interval_fraction_above(values, t)
    return _triangle_fraction_above(values, t)


def distribution_measure(
    field: DiscreteField,
    t: float,
    method: Optional[str] = None,
    order: int = DEFAULT_QUADRATURE_ORDER,
) -> float:
    """
    meas{|u| > t}.

    ``exact`` slices every element along the linear level sets (default in 1D);
    ``quadrature`` tests the indicator at quadrature points of degree
    ``max(order, 2)`` (default in 2D).
    """
    if not t >= 0.0:
        raise InvalidParameterError(f"Level must be >= 0, got {t!r}", t=t)
    mesh = field.mesh
    if method is None:
        method = 'exact' if mesh.dimension == 1 else 'quadrature'
    if method not in DISTRIBUTION_METHODS:
        raise InvalidParameterError(f"Unknown distribution method {method!r}", method=method)
    if method == 'exact':
        local = field.nodal_values[mesh.elements]
        # {|u| > t} is the disjoint union of {u > t} and {-u > t} for t >= 0
        fraction = _fraction_above(local, t) + _fraction_above(-local, t)
        return float(np.dot(mesh.element_measures, fraction))
    rule = quadrature_rule(mesh.dimension, max(order, 2))
    inside = (np.abs(field.at_quadrature(rule)) > t).astype(float)
    return float(np.sum(inside * mesh.quadrature_weights(rule)))


def psi_transform(r: ArrayLike, p: float) -> ArrayLike:
    """
    Psi_p(r) = int_0^r (1 + |s|)^{-p} ds in closed form; p = 1 gives
    sign(r) ln(1 + |r|).
    """
    _check_exponent(p)
    r_arr = np.asarray(r, dtype=float)
    magnitude = np.abs(r_arr)
    if p == 1.0:
        values = np.sign(r_arr) * np.log1p(magnitude)
    else:
        values = np.sign(r_arr) * (1.0 - (1.0 + magnitude) ** (1.0 - p)) / (p - 1.0)
    return float(values) if np.ndim(r) == 0 else values


def psi_transform_field(field: DiscreteField, p: float) -> DiscreteField:
    return field.with_values(psi_transform(field.nodal_values, p))


def poincare_ratio(field: DiscreteField, p: float) -> float:
    """||u - med u||_p / ||grad u||_p, or 0 for a constant field."""
    seminorm = w1p_seminorm(field, p)
    if seminorm == 0.0:
        return 0.0
    return lp_norm(field.shifted(-median(field)), p) / seminorm
