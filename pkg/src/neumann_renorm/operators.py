#!/usr/bin/env python3
"""
Built-in operator families: prototype, linear-diffusion and power-lambda.
"""

import dataclasses
import logging
from typing import Any, Optional, Sequence

import numpy as np

from .base import OperatorFamily
from .errors import InvalidParameterError
from .mesh import DiscreteField
from .model import OperatorSpec, make_prototype, with_lambda

logger = logging.getLogger(__name__)


class PrototypeFamily(OperatorFamily):
    """Smoothed p-Laplacian with power convection c(x)|u|^{p-2}u b."""

    @property
    def name(self) -> str:
        return 'prototype'

    def build(
        self,
        p: float,
        c_field: DiscreteField,
        f: DiscreteField,
        delta: float = 0.0,
        direction: Optional[Sequence[float]] = None,
    ) -> OperatorSpec:
        return make_prototype(p, c_field, f, delta, direction)


class LinearDiffusionFamily(OperatorFamily):
    """
    a(x, s, xi) = (1 + gamma s^2 / (1 + s^2)) xi with p = 2.

    The diffusion depends on s, so the frozen-coefficient map sees v even
    without convection.
    """

    def __init__(self, gamma: float = 1.0):
        if not gamma >= 0.0:
            raise InvalidParameterError(f"gamma must be >= 0, got {gamma!r}", gamma=gamma)
        self.gamma = float(gamma)

    @property
    def name(self) -> str:
        return 'linear-diffusion'

    def describe(self) -> dict[str, Any]:
        return {'name': self.name, 'gamma': self.gamma}

    def build(
        self,
        p: float,
        c_field: DiscreteField,
        f: DiscreteField,
        delta: float = 0.0,
        direction: Optional[Sequence[float]] = None,
    ) -> OperatorSpec:
        if p != 2.0:
            raise InvalidParameterError(f"linear-diffusion is defined for p = 2 only, got {p}", p=p)
        gamma = self.gamma
        convection = make_prototype(2.0, c_field, f, delta, direction)

        def coefficient(s: np.ndarray) -> np.ndarray:
            return 1.0 + gamma * s * s / (1.0 + s * s)

        def a(x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
            return coefficient(s)[:, None] * xi

        def da_dxi(x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
            return coefficient(s)[:, None, None] * np.eye(xi.shape[1])[None, :, :]

        def da_ds(x: np.ndarray, s: np.ndarray, xi: np.ndarray) -> np.ndarray:
            return (2.0 * gamma * s / (1.0 + s * s) ** 2)[:, None] * xi

        return dataclasses.replace(
            convection,
            a=a,
            da_dxi=da_dxi,
            da_ds=da_ds,
            alpha=1.0,
            coercivity_slack=0.0,
            growth_a0=1.0 + gamma,
            growth_a1=0.0,
            a_depends_on_s=True,
            name=self.name,
            rebuild_with_delta=lambda new_delta: self.build(p, c_field, f, new_delta, direction),
        )


class PowerLambdaFamily(OperatorFamily):
    """
    Prototype operator plus the zero-order term lambda(x, s) = mu |s|^{r-2} s
    with coercivity profile g(s) = mu |s|^{r-1}.
    """

    def __init__(self, mu: float = 1.0, r: float = 2.0):
        if not mu > 0.0:
            raise InvalidParameterError(f"mu must be > 0, got {mu!r}", mu=mu)
        if not r >= 2.0:
            # below 2 the derivative of |s|^{r-2}s blows up at s = 0
            raise InvalidParameterError(f"r must be >= 2, got {r!r}", r=r)
        self.mu = float(mu)
        self.r = float(r)

    @property
    def name(self) -> str:
        return 'power-lambda'

    @property
    def has_lambda(self) -> bool:
        return True

    def describe(self) -> dict[str, Any]:
        return {'name': self.name, 'mu': self.mu, 'r': self.r}

    def build(
        self,
        p: float,
        c_field: DiscreteField,
        f: DiscreteField,
        delta: float = 0.0,
        direction: Optional[Sequence[float]] = None,
    ) -> OperatorSpec:
        mu, r = self.mu, self.r

        def lambda_term(x: np.ndarray, s: np.ndarray) -> np.ndarray:
            return mu * np.abs(s) ** (r - 2.0) * s

        def dlambda_ds(x: np.ndarray, s: np.ndarray) -> np.ndarray:
            return mu * (r - 1.0) * np.abs(s) ** (r - 2.0)

        def profile(s: np.ndarray) -> np.ndarray:
            return mu * np.abs(np.asarray(s, dtype=float)) ** (r - 1.0)

        spec = with_lambda(make_prototype(p, c_field, f, delta, direction), lambda_term, profile, dlambda_ds)
        return dataclasses.replace(spec, name=self.name)
