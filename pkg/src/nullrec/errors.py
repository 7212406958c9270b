"""Exceptions raised by the simulators and numerical routines."""

import numpy as np

from .coefficients import NonIntegrableError

__all__ = ["BlowUpError", "NumericalDegeneracyError", "IntegrationError", "NonIntegrableError"]


class BlowUpError(FloatingPointError):
    """A simulated state became non-finite.

    ``index`` is the first grid node carrying a non-finite value.
    """

    def __init__(self, index: int, what: str = "state"):
        super().__init__(f"non-finite {what} at grid node {index}")
        self.index = int(index)


class NumericalDegeneracyError(np.linalg.LinAlgError):
    """A matrix that must be invertible is numerically singular."""


class IntegrationError(RuntimeError):
    """Adaptive quadrature failed to converge."""
