#!/usr/bin/env python3
"""
Weak and renormalized solutions of nonlinear elliptic Neumann problems.

Operator family factory and exports.
"""

import logging
from typing import Optional

from .base import OperatorFamily
from .errors import InvalidParameterError, NeumannError
from .operators import LinearDiffusionFamily, PowerLambdaFamily, PrototypeFamily

logger = logging.getLogger(__name__)

__version__ = '0.1.0'

OPERATOR_NAMES = ('prototype', 'linear-diffusion', 'power-lambda')

__all__ = [
    'OperatorFamily',
    'PrototypeFamily',
    'LinearDiffusionFamily',
    'PowerLambdaFamily',
    'NeumannError',
    'create_operator',
    'OPERATOR_NAMES',
    '__version__',
]


def create_operator(
    name: str = 'prototype',
    gamma: Optional[float] = None,
    mu: Optional[float] = None,
    r: Optional[float] = None,
) -> OperatorFamily:
    """
    Factory function to create an operator family by registry name.

    Args:
        name: 'prototype', 'linear-diffusion' or 'power-lambda'
        gamma: s-dependence strength of 'linear-diffusion' (default 1)
        mu: zero-order coefficient of 'power-lambda' (default 1)
        r: zero-order exponent of 'power-lambda' (default 2)

    Returns:
        Configured OperatorFamily instance

    Raises:
        InvalidParameterError: If the name is unknown (a ValueError)

    Examples:
        >>> family = create_operator('prototype')
        >>> family = create_operator('power-lambda', mu=1.0, r=2.0)
    """
    name = (name or 'prototype').lower()
    if name == 'prototype':
        family: OperatorFamily = PrototypeFamily()
    elif name == 'linear-diffusion':
        family = LinearDiffusionFamily(1.0 if gamma is None else gamma)
    elif name == 'power-lambda':
        family = PowerLambdaFamily(1.0 if mu is None else mu, 2.0 if r is None else r)
    else:
        raise InvalidParameterError(
            f"Unknown operator: {name}. Use one of: {', '.join(OPERATOR_NAMES)}",
            operator=name,
        )
    logger.debug(f"Operator family: {family.describe()}")
    return family
