"""Sampled functions on uniform 1D grids and the library's exception types."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InvalidInput(ValueError):
    """Raised when arguments violate an operation's preconditions."""


class EvaluationError(ArithmeticError):
    """Raised when a user-supplied evaluator returns non-finite values."""


class NonFiniteError(ArithmeticError):
    """Raised when an evolution produces non-finite values.

    The partial trace computed before the failure is kept on ``trace``.
    """

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


def _steps_match(a: float, b: float) -> bool:
    return a == b or abs(a - b) <= 1e-12 * max(abs(a), abs(b))


@dataclass(frozen=True, eq=False)
class GridFn:
    """Finite samples ``values[k] = f(origin + k * step)``.

    Outside the stored index range the function is implicitly ``+inf``.
    When ``periodic`` is set the samples hold one period of length
    ``len(values) * step`` (the sample at ``origin + period`` is not stored).
    """

    values: np.ndarray
    step: float
    origin: float = 0.0
    periodic: bool = False

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if vals.size == 0:
            raise InvalidInput("GridFn needs at least one sample")
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("GridFn values must be finite")
        if not (self.step > 0 and np.isfinite(self.step)):
            raise InvalidInput(f"grid step must be positive, got {self.step}")
        if self.periodic and vals.size < 2:
            raise InvalidInput("a periodic GridFn needs at least two samples")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "step", float(self.step))
        object.__setattr__(self, "origin", float(self.origin))

    @property
    def n(self) -> int:
        """Last index; samples are indexed ``0..n``."""
        return self.values.size - 1

    def __len__(self) -> int:
        return self.values.size

    @property
    def coords(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.values.size)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values)

    @property
    def period(self) -> float:
        return self.values.size * self.step

    def with_values(self, values) -> GridFn:
        return GridFn(values, self.step, self.origin, self.periodic)

    def shifted(self, k: int) -> GridFn:
        """Same samples, index ``0`` moved to coordinate ``origin + k * step``."""
        return GridFn(self.values, self.step, self.origin + k * self.step, self.periodic)

    def __add__(self, c: float) -> GridFn:
        return self.with_values(self.values + c)

    def __sub__(self, c: float) -> GridFn:
        return self.with_values(self.values - c)

    def __repr__(self) -> str:
        kind = "periodic " if self.periodic else ""
        return f"GridFn({kind}n={self.n}, step={self.step:g}, origin={self.origin:g})"
