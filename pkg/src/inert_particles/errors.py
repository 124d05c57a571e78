"""Exception types shared across the package."""

from __future__ import annotations


class InputError(ValueError):
    """An argument violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """A fixed-point iteration did not reach its tolerance.

    ``residual`` holds the last sup-norm distance between iterates.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


class InsufficientDataError(ValueError):
    """An estimator refuses to report because its inputs are too thin."""
