#!/usr/bin/env python3
"""
Data and coefficient fields: bumps, dipoles, cosines, manufactured cases and
textual field specifications such as ``dipole(0.25, 0.75, 0.1, 1)``.
"""

import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, InvalidFieldError, InvalidParameterError
from .mesh import DiscreteField, Mesh, PointwiseFunction, read_snapshot

logger = logging.getLogger(__name__)

FIELD_KINDS = ('zero', 'constant', 'cosine', 'manufactured', 'bump', 'dipole', 'nodal')
Point = Union[float, Sequence[float]]


def _as_point(center: Point, dimension: int) -> np.ndarray:
    point = np.atleast_1d(np.asarray(center, dtype=float))
    if point.shape[0] != dimension:
        raise InvalidParameterError(f"Point {list(point)} does not have {dimension} coordinates")
    return point


def bump(center: Point, width: float, mass: float, dimension: int) -> PointwiseFunction:
    """
    Quartic bump C (1 - r^2/w^2)^2 supported in |x - center| < w, scaled so
    that its integral over R^N equals ``mass``.
    """
    if not width > 0.0:
        raise InvalidParameterError(f"Bump width must be > 0, got {width!r}", width=width)
    c0 = _as_point(center, dimension)
    if dimension == 1:
        height = 15.0 * mass / (16.0 * width)
    else:
        height = 3.0 * mass / (math.pi * width * width)

    def evaluate(x: np.ndarray) -> np.ndarray:
        r2 = np.sum((np.asarray(x) - c0[None, :]) ** 2, axis=1) / (width * width)
        return np.where(r2 < 1.0, height * (1.0 - r2) ** 2, 0.0)

    return evaluate


def dipole(x0: Point, x1: Point, width: float, mass: float, dimension: int) -> PointwiseFunction:
    """bump(x0) - bump(x1): two narrow bumps of equal mass and opposite sign."""
    positive = bump(x0, width, mass, dimension)
    negative = bump(x1, width, mass, dimension)
    return lambda x: positive(x) - negative(x)


def constant(value: float) -> PointwiseFunction:
    return lambda x: np.full(np.asarray(x).shape[0], float(value))


def cosine(amplitude: float = 1.0) -> PointwiseFunction:
    """amplitude * prod_i cos(pi x_i)."""
    return lambda x: amplitude * np.prod(np.cos(math.pi * np.asarray(x)), axis=1)


@dataclass(frozen=True, slots=True)
class ManufacturedCase:
    """Exact solution u*(x), its gradient and the datum that produces it."""

    solution: PointwiseFunction
    gradient: PointwiseFunction
    datum: PointwiseFunction
    p: float
    dimension: int


def manufactured_cosine(
    dimension: int,
    p: float = 2.0,
    reaction: Optional[tuple[float, float]] = None,
) -> ManufacturedCase:
    """
    u*(x) = prod_i cos(pi x_i) on the unit interval or square (zero flux on
    the boundary, zero mean).

    1D: f = (p-1) pi^p sin^{p-2}(pi x) cos(pi x) for p >= 2; 2D only p = 2
    with f = 2 pi^2 u*. ``reaction = (mu, r)`` adds mu |u*|^{r-2} u* for the
    zero-order problem with lambda(s) = mu |s|^{r-2} s.
    """
    pi = math.pi
    if dimension == 1:
        if p < 2.0:
            raise InvalidParameterError(f"Manufactured 1D case needs p >= 2, got {p}", p=p)

        def solution(x: np.ndarray) -> np.ndarray:
            return np.cos(pi * np.asarray(x)[:, 0])

        def gradient(x: np.ndarray) -> np.ndarray:
            return (-pi * np.sin(pi * np.asarray(x)[:, 0]))[:, None]

        def diffusion(x: np.ndarray) -> np.ndarray:
            t = pi * np.asarray(x)[:, 0]
            return (p - 1.0) * pi ** p * np.abs(np.sin(t)) ** (p - 2.0) * np.cos(t)
    elif dimension == 2:
        if p != 2.0:
            raise InvalidParameterError("Manufactured 2D case is available for p = 2 only", p=p)

        def solution(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x)
            return np.cos(pi * x[:, 0]) * np.cos(pi * x[:, 1])

        def gradient(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x)
            return np.column_stack([
                -pi * np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1]),
                -pi * np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]),
            ])

        def diffusion(x: np.ndarray) -> np.ndarray:
            return 2.0 * pi * pi * solution(x)
    else:
        raise InvalidParameterError(f"Unsupported dimension {dimension}", dimension=dimension)

    if reaction is None:
        datum = diffusion
    else:
        mu, r = reaction

        def datum(x: np.ndarray) -> np.ndarray:
            u = solution(x)
            return diffusion(x) + mu * np.abs(u) ** (r - 2.0) * u

    return ManufacturedCase(solution, gradient, datum, float(p), dimension)


@dataclass(frozen=True, slots=True)
class FieldSpec:
    """Parsed field specification: a kind, numeric arguments and an optional file path."""

    kind: str
    args: tuple[tuple[float, ...], ...] = ()
    path: Optional[str] = None

    def __str__(self) -> str:
        if self.kind == 'nodal':
            return f"nodal({self.path})"
        if not self.args:
            return self.kind
        rendered = ', '.join(' '.join(repr(v) for v in arg) for arg in self.args)
        return f"{self.kind}({rendered})"


_CALL_RE = re.compile(r'^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$')
_ARITY = {'zero': 0, 'manufactured': 0, 'constant': 1, 'cosine': 1, 'bump': 3, 'dipole': 4}


def parse_field_spec(text: str, key: str = 'field') -> FieldSpec:
    """
    Parse ``kind(arg, arg, ...)``; an argument holding several space-separated
    numbers is a point.
    """
    match = _CALL_RE.match(text)
    if not match or match.group(1) not in FIELD_KINDS:
        raise ConfigError(f"{key}: unknown field specification {text!r}", key=key)
    kind, inner = match.group(1), match.group(2)
    if kind == 'nodal':
        if not inner or not inner.strip():
            raise ConfigError(f"{key}: nodal() needs a snapshot path", key=key)
        return FieldSpec('nodal', (), inner.strip().strip('"\''))
    parts = [] if inner is None or not inner.strip() else [part.strip() for part in inner.split(',')]
    if kind == 'cosine' and not parts:
        parts = ['1']
    if len(parts) != _ARITY[kind]:
        raise ConfigError(f"{key}: {kind} takes {_ARITY[kind]} arguments, got {len(parts)}", key=key)
    args = []
    for part in parts:
        try:
            values = tuple(float(token) for token in part.split())
        except ValueError:
            raise ConfigError(f"{key}: non-numeric argument {part!r}", key=key) from None
        if not values or not all(math.isfinite(v) for v in values):
            raise ConfigError(f"{key}: invalid argument {part!r}", key=key)
        args.append(values)
    return FieldSpec(kind, tuple(args))


def _scalar(arg: tuple[float, ...], name: str) -> float:
    if len(arg) != 1:
        raise InvalidParameterError(f"{name} must be a single number, got {arg}")
    return arg[0]


def build_field(
    spec: FieldSpec,
    mesh: Mesh,
    p: float = 2.0,
    reaction: Optional[tuple[float, float]] = None,
    base_dir: Optional[Path] = None,
) -> DiscreteField:
    """Sample a field specification at the nodes of ``mesh``."""
    dim = mesh.dimension
    if spec.kind == 'zero':
        return DiscreteField.constant(mesh, 0.0)
    if spec.kind == 'constant':
        return DiscreteField.constant(mesh, _scalar(spec.args[0], 'constant value'))
    if spec.kind == 'cosine':
        return DiscreteField.sample(mesh, cosine(_scalar(spec.args[0], 'amplitude')))
    if spec.kind == 'manufactured':
        return DiscreteField.sample(mesh, manufactured_cosine(dim, p, reaction).datum)
    if spec.kind == 'bump':
        center, width, mass = spec.args
        return DiscreteField.sample(mesh, bump(center, _scalar(width, 'width'), _scalar(mass, 'mass'), dim))
    if spec.kind == 'dipole':
        x0, x1, width, mass = spec.args
        return DiscreteField.sample(mesh, dipole(x0, x1, _scalar(width, 'width'), _scalar(mass, 'mass'), dim))
    if spec.kind == 'nodal':
        path = Path(spec.path or '')
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        if not path.is_file():
            raise InvalidFieldError(f"Snapshot file not found: {path}", path=str(path))
        snap_mesh, values = read_snapshot(path)
        if values is None:
            raise InvalidFieldError(f"Snapshot {path} carries no nodal values", path=str(path))
        if snap_mesh.n_nodes != mesh.n_nodes or not np.allclose(snap_mesh.nodes, mesh.nodes, rtol=0.0, atol=1e-12):
            raise InvalidFieldError(f"Snapshot {path} does not match the mesh {mesh.tag}", path=str(path))
        return DiscreteField(mesh, values.nodal_values)
    raise InvalidFieldError(f"Unknown field kind {spec.kind!r}")
