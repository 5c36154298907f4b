"""Exception types shared across the package."""

from __future__ import annotations


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted before reaching tolerance.

    Carries the last iterate so callers can inspect how far the run got.
    """

    def __init__(self, message: str, last_iterate=None, iterations: int = 0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class TrainingDivergedError(RuntimeError):
    """A training loop produced a non-finite loss or parameter.

    Carries the last finite snapshot taken before divergence.
    """

    def __init__(self, message: str, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot
