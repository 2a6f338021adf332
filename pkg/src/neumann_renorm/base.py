#!/usr/bin/env python3
"""
Base class for operator families.
"""

from abc import ABC, abstractmethod
from typing import Any, Optional, Sequence

from .mesh import DiscreteField
from .model import OperatorSpec


class OperatorFamily(ABC):
    """Abstract base class for named families of operators (a, Phi, lambda)."""

    @abstractmethod
    def build(
        self,
        p: float,
        c_field: DiscreteField,
        f: DiscreteField,
        delta: float = 0.0,
        direction: Optional[Sequence[float]] = None,
    ) -> OperatorSpec:
        """
        Build the operator for one datum and coefficient.

        Args:
            p: growth exponent
            c_field: convection coefficient c(x) >= 0
            f: datum
            delta: gradient smoothing
            direction: convection direction b (unit vector; e_1 if omitted)

        Returns:
            OperatorSpec
        """
        pass

    @property
    @abstractmethod
    def name(self) -> str:
        """
        Family name as used in run configurations.

        Returns:
            Registry name
        """
        pass

    @property
    def has_lambda(self) -> bool:
        """True for families with a zero-order term."""
        return False

    def describe(self) -> dict[str, Any]:
        """Parameters echoed into run reports."""
        return {'name': self.name}
