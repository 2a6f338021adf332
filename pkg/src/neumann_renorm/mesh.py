#!/usr/bin/env python3
"""
Simplicial meshes, P1 fields, quadrature and snapshot files.

Meshes are 1D interval partitions or 2D triangulations. A ``DiscreteField``
is a continuous piecewise-linear function given by its nodal values; the
lumped node measures (each element's measure split evenly among its nodes)
are the weights used by the median and by mean corrections.
"""

import functools
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.sparse.csgraph import connected_components

from .errors import InvalidDomainError, InvalidFieldError, InvalidParameterError, NumericError

logger = logging.getLogger(__name__)

DEFAULT_QUADRATURE_ORDER = 4
SNAPSHOT_HEADER = 'neumann-snapshot 1'

PointwiseFunction = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, slots=True)
class DomainSpec:
    """Either ``interval(a, b)`` or the unit square."""

    kind: str
    bounds: tuple[float, float] = (0.0, 1.0)

    def __str__(self) -> str:
        if self.kind == 'interval':
            return f"interval({self.bounds[0]!r}, {self.bounds[1]!r})"
        return 'unit_square'


def interval(a: float, b: float) -> DomainSpec:
    return DomainSpec('interval', (float(a), float(b)))


def unit_square() -> DomainSpec:
    return DomainSpec('unit_square')


_INTERVAL_RE = re.compile(r'^\s*interval\s*\(\s*([^,]+?)\s*,\s*([^)]+?)\s*\)\s*$')


def parse_domain(text: str) -> DomainSpec:
    """Parse ``interval(a, b)`` or ``unit_square``."""
    stripped = text.strip()
    if stripped == 'unit_square':
        return unit_square()
    match = _INTERVAL_RE.match(stripped)
    if not match:
        raise InvalidDomainError(f"Unknown domain: {text!r}", domain=text)
    try:
        a, b = float(match.group(1)), float(match.group(2))
    except ValueError:
        raise InvalidDomainError(f"Non-numeric interval bounds in {text!r}", domain=text) from None
    return interval(a, b)


@dataclass(frozen=True, slots=True, eq=False)
class QuadratureRule:
    """Barycentric points and weights on the reference simplex (weights sum to 1)."""

    dimension: int
    points: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self) -> None:
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-14:
            raise InvalidParameterError("Quadrature weights must sum to 1", order=self.order)
        if np.any(self.weights <= 0.0):
            raise InvalidParameterError("Quadrature weights must be positive", order=self.order)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])


# Symmetric triangle rules (Dunavant); each entry is (weight, barycentric orbit generator).
_TRIANGLE_RULES = {
    1: [(1.0, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0))],
    2: [(1.0 / 3.0, (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0))],
    4: [
        (0.223381589678011, (0.108103018168070, 0.445948490915965, 0.445948490915965)),
        (0.109951743655322, (0.816847572980459, 0.091576213509771, 0.091576213509771)),
    ],
    5: [
        (0.225, (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)),
        (0.132394152788506, (0.059715871789770, 0.470142064105115, 0.470142064105115)),
        (0.125939180544827, (0.797426985353087, 0.101286507323456, 0.101286507323456)),
    ],
}


def _orbit(generator: tuple[float, float, float]) -> list[tuple[float, float, float]]:
    a, b, c = generator
    if a == b == c:
        return [generator]
    # generators have the form (a, b, b)
    return [(a, b, c), (b, a, c), (b, c, a)]


@functools.lru_cache(maxsize=None)
def quadrature_rule(dimension: int, order: int = DEFAULT_QUADRATURE_ORDER) -> QuadratureRule:
    """
    Quadrature on the reference simplex exact for polynomials of degree ``order``.

    1D uses Gauss-Legendre; 2D uses symmetric Dunavant rules up to degree 5
    (degree 4: 6 points) and a collapsed Gauss product rule beyond.
    """
    if order < 1:
        raise InvalidParameterError(f"Quadrature order must be >= 1, got {order}", order=order)
    if dimension == 1:
        npts = math.ceil((order + 1) / 2)
        t, w = np.polynomial.legendre.leggauss(npts)
        s = 0.5 * (t + 1.0)
        points = np.column_stack([1.0 - s, s])
        weights = 0.5 * w
        weights = weights / weights.sum()
        return QuadratureRule(1, points, weights, order)
    if dimension == 2:
        table_order = next((k for k in sorted(_TRIANGLE_RULES) if k >= order), None)
        if table_order is not None:
            pts: list[tuple[float, float, float]] = []
            wts: list[float] = []
            for weight, generator in _TRIANGLE_RULES[table_order]:
                for point in _orbit(generator):
                    pts.append(point)
                    wts.append(weight)
            weights = np.asarray(wts)
            return QuadratureRule(2, np.asarray(pts), weights / weights.sum(), order)
        return _collapsed_gauss_rule(order)
    raise InvalidParameterError(f"Unsupported dimension {dimension}", dimension=dimension)


def _collapsed_gauss_rule(order: int) -> QuadratureRule:
    nu = math.ceil((order + 2) / 2)
    nv = math.ceil((order + 1) / 2)
    tu, wu = np.polynomial.legendre.leggauss(nu)
    tv, wv = np.polynomial.legendre.leggauss(nv)
    u = 0.5 * (tu + 1.0)
    v = 0.5 * (tv + 1.0)
    uu, vv = np.meshgrid(u, v, indexing='ij')
    ww = np.outer(0.5 * wu, 0.5 * wv) * (1.0 - uu) * 2.0
    xi = uu.ravel()
    eta = (vv * (1.0 - uu)).ravel()
    points = np.column_stack([1.0 - xi - eta, xi, eta])
    weights = ww.ravel()
    return QuadratureRule(2, points, weights / weights.sum(), order)


@dataclass(frozen=True, slots=True, eq=False)
class Mesh:
    """
    Simplicial discretization of a connected domain.

    Attributes:
        dimension: 1 (intervals) or 2 (triangles)
        nodes: (n_nodes, dimension) coordinates
        elements: (n_elements, dimension + 1) node indices, positively oriented
        element_measures: length or area of every element
        total_measure: meas(Omega)
        basis_gradients: (n_elements, dimension + 1, dimension) constant P1 basis gradients
        node_measures: lumped per-node share of meas(Omega)
    """

    dimension: int
    nodes: np.ndarray
    elements: np.ndarray
    element_measures: np.ndarray
    total_measure: float
    basis_gradients: np.ndarray
    node_measures: np.ndarray

    @classmethod
    def from_arrays(cls, nodes: np.ndarray, elements: np.ndarray) -> 'Mesh':
        """Build a mesh, fixing element orientation and deriving measures and gradients."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        elements = np.array(elements, dtype=np.int64)
        dimension = nodes.shape[1]
        if dimension not in (1, 2):
            raise InvalidDomainError(f"Only 1D and 2D meshes are supported, got {dimension}D")
        if elements.ndim != 2 or elements.shape[1] != dimension + 1:
            raise InvalidDomainError("Elements must have dimension + 1 node indices")
        if elements.size == 0:
            raise InvalidDomainError("Mesh has no elements")
        if elements.min() < 0 or elements.max() >= nodes.shape[0]:
            raise InvalidDomainError("Element node index out of range")
        for i, row in enumerate(elements):
            if len(set(row.tolist())) != row.size:
                raise InvalidDomainError(f"Element {i} repeats a node", element=i)

        edges = nodes[elements[:, 1:]] - nodes[elements[:, :1]]   # (m, d, d): rows are edge vectors
        det = np.linalg.det(edges) if dimension > 1 else edges[:, 0, 0]
        flip = det < 0.0
        if np.any(flip):
            elements[flip, 0], elements[flip, 1] = elements[flip, 1].copy(), elements[flip, 0].copy()
            edges = nodes[elements[:, 1:]] - nodes[elements[:, :1]]
            det = np.linalg.det(edges) if dimension > 1 else edges[:, 0, 0]
        if np.any(det <= 0.0):
            bad = int(np.argmax(det <= 0.0))
            raise InvalidDomainError(f"Degenerate element {bad}", element=bad)

        measures = det / math.factorial(dimension)
        # barycentric gradients: lambda_{1..d} = B^{-T} (x - x0), B columns are edges
        inv = np.linalg.inv(edges)                          # (m, d, d)
        grads_rest = np.transpose(inv, (0, 2, 1))           # row i = grad lambda_{i+1}
        grad0 = -grads_rest.sum(axis=1, keepdims=True)
        basis_gradients = np.concatenate([grad0, grads_rest], axis=1)

        node_measures = np.bincount(
            elements.ravel(),
            weights=np.repeat(measures / (dimension + 1), dimension + 1),
            minlength=nodes.shape[0],
        )
        mesh = cls(
            dimension=dimension,
            nodes=nodes,
            elements=elements,
            element_measures=measures,
            total_measure=float(np.sum(measures)),
            basis_gradients=basis_gradients,
            node_measures=node_measures,
        )
        mesh._check_connected()
        return mesh

    def _check_connected(self) -> None:
        n = self.n_nodes
        rows = np.repeat(self.elements, self.dimension + 1, axis=1).ravel()
        cols = np.tile(self.elements, (1, self.dimension + 1)).ravel()
        graph = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        count, _ = connected_components(graph, directed=False)
        if count != 1:
            raise InvalidDomainError(f"Mesh is not connected ({count} components)", components=count)

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @property
    def diameter(self) -> float:
        span = self.nodes.max(axis=0) - self.nodes.min(axis=0)
        return float(np.linalg.norm(span))

    @property
    def tag(self) -> str:
        return f"{self.dimension}d-{self.n_nodes}n-{self.n_elements}e"

    def quadrature_points(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature points, shape (n_elements, n_points, dimension)."""
        vertices = self.nodes[self.elements]                       # (m, d+1, d)
        return np.einsum('qj,ejk->eqk', rule.points, vertices)

    def quadrature_weights(self, rule: QuadratureRule) -> np.ndarray:
        """Physical weights, shape (n_elements, n_points)."""
        return self.element_measures[:, None] * rule.weights[None, :]


def build_mesh(domain: Union[DomainSpec, str], resolution: int) -> Mesh:
    """
    Uniform mesh of ``interval(a, b)`` (``resolution`` elements) or of the unit
    square (``2 * resolution**2`` triangles, every cell split along the
    (0,0)-(1,1) diagonal).
    """
    if isinstance(domain, str):
        domain = parse_domain(domain)
    if int(resolution) != resolution or resolution < 1:
        raise InvalidDomainError(f"Resolution must be a positive integer, got {resolution!r}")
    n = int(resolution)
    if domain.kind == 'interval':
        a, b = domain.bounds
        if not a < b:
            raise InvalidDomainError(f"Empty interval ({a}, {b})", domain=str(domain))
        nodes = np.linspace(a, b, n + 1)[:, None]
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        return Mesh.from_arrays(nodes, elements)
    if domain.kind == 'unit_square':
        ticks = np.linspace(0.0, 1.0, n + 1)
        xx, yy = np.meshgrid(ticks, ticks, indexing='xy')
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing='xy')
        v00 = (i + j * (n + 1)).ravel()
        v10 = v00 + 1
        v01 = v00 + (n + 1)
        v11 = v01 + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        return Mesh.from_arrays(nodes, np.vstack([lower, upper]))
    raise InvalidDomainError(f"Unknown domain kind {domain.kind!r}")


@dataclass(frozen=True, slots=True, eq=False)
class DiscreteField:
    """Continuous piecewise-linear scalar field given by nodal values."""

    mesh: Mesh
    nodal_values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.nodal_values, dtype=float).reshape(-1)
        if values.shape[0] != self.mesh.n_nodes:
            raise InvalidFieldError(
                f"Field has {values.shape[0]} values for {self.mesh.n_nodes} nodes",
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.argmax(~np.isfinite(values)))
            raise InvalidFieldError(f"Non-finite nodal value at node {bad}", node=bad)
        values.setflags(write=False)
        object.__setattr__(self, 'nodal_values', values)

    @classmethod
    def constant(cls, mesh: Mesh, value: float = 0.0) -> 'DiscreteField':
        return cls(mesh, np.full(mesh.n_nodes, float(value)))

    @classmethod
    def sample(cls, mesh: Mesh, function: PointwiseFunction) -> 'DiscreteField':
        """Nodal interpolant of a vectorized pointwise function."""
        values = np.broadcast_to(np.asarray(function(mesh.nodes), dtype=float), (mesh.n_nodes,))
        return cls(mesh, values)

    @property
    def lumped_node_measures(self) -> np.ndarray:
        return self.mesh.node_measures

    def with_values(self, values: np.ndarray) -> 'DiscreteField':
        return DiscreteField(self.mesh, values)

    def shifted(self, constant: float) -> 'DiscreteField':
        return DiscreteField(self.mesh, self.nodal_values + constant)

    def __add__(self, other: 'DiscreteField') -> 'DiscreteField':
        return DiscreteField(self.mesh, self.nodal_values + other.nodal_values)

    def __sub__(self, other: 'DiscreteField') -> 'DiscreteField':
        return DiscreteField(self.mesh, self.nodal_values - other.nodal_values)

    def scaled(self, factor: float) -> 'DiscreteField':
        return DiscreteField(self.mesh, factor * self.nodal_values)

    def integral(self) -> float:
        """Exact integral of the P1 field."""
        return float(np.dot(self.mesh.node_measures, self.nodal_values))

    def gradients(self) -> np.ndarray:
        """Element-wise constant gradients, shape (n_elements, dimension)."""
        local = self.nodal_values[self.mesh.elements]
        return np.einsum('ej,ejk->ek', local, self.mesh.basis_gradients)

    def at_quadrature(self, rule: QuadratureRule) -> np.ndarray:
        """Values at quadrature points, shape (n_elements, n_points)."""
        local = self.nodal_values[self.mesh.elements]
        return local @ rule.points.T


def field_interpolator(field_: DiscreteField) -> PointwiseFunction:
    """
    Pointwise evaluator of a P1 field at arbitrary points of the domain.

    1D is exact; 2D interpolates linearly on a Delaunay triangulation of the
    nodes (exact at nodes), falling back to the nearest node off the hull.
    """
    mesh = field_.mesh
    values = field_.nodal_values
    if np.all(values == values[0]):
        constant = float(values[0])
        return lambda x: np.full(np.asarray(x).shape[0], constant)
    if mesh.dimension == 1:
        order = np.argsort(mesh.nodes[:, 0])
        xs = mesh.nodes[order, 0]
        ys = values[order]
        return lambda x: np.interp(np.asarray(x)[:, 0], xs, ys)
    linear = LinearNDInterpolator(mesh.nodes, values)
    nearest = NearestNDInterpolator(mesh.nodes, values)

    def evaluate(x: np.ndarray) -> np.ndarray:
        out = np.asarray(linear(x), dtype=float).reshape(-1)
        missing = ~np.isfinite(out)
        if np.any(missing):
            out[missing] = nearest(np.asarray(x)[missing])
        return out

    return evaluate


def integrate(mesh: Mesh, integrand: PointwiseFunction, order: int = DEFAULT_QUADRATURE_ORDER) -> float:
    """
    Integrate a vectorized pointwise function over the mesh.

    ``integrand`` receives an (n, dimension) array of points and returns n
    values (or a scalar, broadcast).
    """
    rule = quadrature_rule(mesh.dimension, order)
    points = mesh.quadrature_points(rule)
    flat = points.reshape(-1, mesh.dimension)
    values = np.asarray(integrand(flat), dtype=float)
    values = np.broadcast_to(values, (flat.shape[0],)).reshape(mesh.n_elements, rule.size)
    bad = ~np.isfinite(values)
    if np.any(bad):
        element = int(np.argmax(bad.any(axis=1)))
        raise NumericError(f"Non-finite integrand value in element {element}", element=element)
    return float(np.sum(values * mesh.quadrature_weights(rule)))


def write_snapshot(path: Union[str, Path], mesh: Mesh, field_: Optional[DiscreteField] = None) -> Path:
    """Write mesh (and optionally nodal values) with 17 significant digits."""
    path = Path(path)
    lines = [
        SNAPSHOT_HEADER,
        f"dimension {mesh.dimension}",
        f"nodes {mesh.n_nodes}",
        f"elements {mesh.n_elements}",
        f"values {1 if field_ is not None else 0}",
    ]
    lines.extend(' '.join(format(c, '.17g') for c in row) for row in mesh.nodes)
    lines.extend(' '.join(str(int(i)) for i in row) for row in mesh.elements)
    if field_ is not None:
        lines.extend(format(v, '.17g') for v in field_.nodal_values)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def read_snapshot(path: Union[str, Path]) -> tuple[Mesh, Optional[DiscreteField]]:
    """Read a snapshot written by ``write_snapshot``."""
    path = Path(path)
    raw = [line.strip() for line in path.read_text(encoding='utf-8').splitlines()]
    lines = [line for line in raw if line and not line.startswith('#')]
    if not lines or lines[0] != SNAPSHOT_HEADER:
        raise InvalidFieldError(f"{path}: not a snapshot file", path=str(path))
    header: dict[str, int] = {}
    for line in lines[1:5]:
        key, value = line.split()
        header[key] = int(value)
    dim, n_nodes, n_elements = header['dimension'], header['nodes'], header['elements']
    body = lines[5:]
    expected = n_nodes + n_elements + (n_nodes if header['values'] else 0)
    if len(body) != expected:
        raise InvalidFieldError(f"{path}: expected {expected} data lines, found {len(body)}", path=str(path))
    nodes = np.array([[float(c) for c in line.split()] for line in body[:n_nodes]]).reshape(n_nodes, dim)
    elements = np.array([[int(i) for i in line.split()] for line in body[n_nodes:n_nodes + n_elements]])
    mesh = Mesh.from_arrays(nodes, elements)
    if not header['values']:
        return mesh, None
    values = np.array([float(line) for line in body[n_nodes + n_elements:]])
    return mesh, DiscreteField(mesh, values)


def sample_values(mesh: Mesh, values: Sequence[float]) -> DiscreteField:
    return DiscreteField(mesh, np.asarray(values, dtype=float))
