"""Exception and warning types shared across the package."""

from __future__ import annotations

import numpy as np


class UnsupportedOperation(NotImplementedError):
    """Raised when an operator kind does not support the requested action."""


class CGBreakdown(ArithmeticError):
    """Conjugate gradients hit non-positive curvature.

    ``trace`` holds the residual norms of the iterations completed before the
    breakdown.
    """

    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = list(trace)


class NonFiniteLoss(ArithmeticError):
    """An optimizer produced a non-finite loss; ``last_iterate`` is the last finite point."""

    def __init__(self, message: str, last_iterate: np.ndarray, trace: list[float]):
        super().__init__(message)
        self.last_iterate = np.array(last_iterate, copy=True)
        self.trace = list(trace)


class SolverAbort(RuntimeError):
    """A reverse-sampling run failed at step ``t``."""

    def __init__(self, message: str, t: int, trace: list | None = None):
        super().__init__(f"step t={t}: {message}")
        self.t = t
        self.trace = trace or []


class EncoderConvergenceWarning(RuntimeWarning):
    """Gauss-Newton encoding hit its iteration cap above tolerance."""


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    ``pointer`` is the JSON pointer of the offending field.
    """

    def __init__(self, message: str, pointer: str = ""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class TensorFileError(IOError):
    """Raw tensor payload and its sidecar disagree."""
