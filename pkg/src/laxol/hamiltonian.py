"""Separable Hamiltonians ``H(t, x, p) = K(p) + V(t, x)``.

Only the conjugate ``K*`` of the kinetic part enters the scheme. Two kinds
are provided: mechanical ``K(p) = |p + P|^2 / 2`` with ``K*(v) = v^2/2 - P v``,
and a convex ``K*`` tabulated on a velocity window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import EvaluationError, InvalidInput


@dataclass(frozen=True)
class Mechanical:
    """``K*(v) = v^2 / 2 - drift * v`` (one axis)."""

    drift: float = 0.0

    def conjugate(self, v):
        v = np.asarray(v, dtype=np.float64)
        return 0.5 * v * v - self.drift * v

    @property
    def argmin(self) -> float:
        return float(self.drift)


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Convex ``K*`` given by samples, linearly interpolated in between.

    Evaluating outside ``[velocities[0], velocities[-1]]`` is an error.
    """

    velocities: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.velocities, dtype=np.float64)
        k = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.shape != k.shape or v.size < 2:
            raise InvalidInput("tabulated K* needs matching 1-D velocity/value arrays (>= 2 samples)")
        if not np.all(np.diff(v) > 0):
            raise InvalidInput("tabulated velocities must be strictly increasing")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(k))):
            raise InvalidInput("tabulated K* must be finite")
        slopes = np.diff(k) / np.diff(v)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(slopes))))
        bad = np.diff(slopes) < -tol
        if bad.any():
            raise InvalidInput(f"tabulated K* is not convex near sample {int(np.argmax(bad)) + 1}")
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "values", k)

    def conjugate(self, v):
        v = np.asarray(v, dtype=np.float64)
        lo, hi = self.velocities[0], self.velocities[-1]
        if np.any(v < lo) or np.any(v > hi):
            raise InvalidInput(
                f"velocity window [{float(np.min(v)):g}, {float(np.max(v)):g}] "
                f"exceeds tabulated range [{lo:g}, {hi:g}]"
            )
        return np.interp(v, self.velocities, self.values)

    @property
    def argmin(self) -> float:
        return float(self.velocities[int(np.argmin(self.values))])


Kinetic = Mechanical | Tabulated


@dataclass(frozen=True)
class Term:
    """``amplitude * shape(frequency * x + phase) * time_shape(time_frequency * t)``."""

    amplitude: float
    frequency: float = 1.0
    shape: str = "cos"
    phase: float = 0.0
    time_shape: str | None = None
    time_frequency: float = 1.0

    def __post_init__(self):
        if self.shape not in _SHAPES:
            raise InvalidInput(f"unknown term shape {self.shape!r}")
        if self.time_shape is not None and self.time_shape not in _SHAPES:
            raise InvalidInput(f"unknown time shape {self.time_shape!r}")


_SHAPES = {"cos": np.cos, "sin": np.sin}


def _const_eval(t, *coords):
    # sentinel: constant potentials are filled from Potential.constant
    raise AssertionError("unreachable")


@dataclass(frozen=True)
class Potential:
    """Potential ``V(t, x)`` with its declared bound and periodicity flags.

    ``evaluator(t, *coords)`` must broadcast over coordinate arrays.
    ``time_period`` is ``None`` for autonomous potentials.
    """

    evaluator: Callable
    bound: float
    time_period: float | None = None
    autonomous: bool = True
    space_periodic: bool = True
    name: str = "custom"
    terms: tuple = field(default=(), compare=False)
    constant: float = 0.0

    def __call__(self, t: float, *coords) -> np.ndarray:
        if self.evaluator is _const_eval:
            shape = np.broadcast_shapes(*(np.shape(c) for c in coords)) if coords else ()
            return np.full(shape, self.constant)
        vals = np.asarray(self.evaluator(t, *coords), dtype=np.float64)
        if coords:
            vals = np.broadcast_to(vals, np.broadcast_shapes(*(np.shape(c) for c in coords)))
        if not np.all(np.isfinite(vals)):
            raise EvaluationError(f"potential {self.name!r} returned non-finite values at t={t}")
        return vals

    @property
    def is_zero(self) -> bool:
        return self.is_constant and self.constant == 0.0

    @property
    def is_constant(self) -> bool:
        return self.autonomous and not self.terms and self.evaluator is _const_eval

    def spot_check(self, xs: np.ndarray, ts: Sequence[float] = (0.0, 0.25, 0.5)) -> None:
        """Check ``|V| <= bound`` on probe points."""
        for t in ts:
            v = self(t, xs)
            if np.max(np.abs(v)) > self.bound * (1 + 1e-12) + 1e-300:
                raise InvalidInput(
                    f"potential {self.name!r} exceeds declared bound {self.bound:g} at t={t}"
                )

    @classmethod
    def zero(cls) -> Potential:
        return cls(_const_eval, 0.0, None, True, True, "zero", (), 0.0)

    @classmethod
    def constant_value(cls, c: float) -> Potential:
        if c == 0:
            return cls.zero()
        return cls(_const_eval, abs(c), None, True, True, f"const({c:g})", (), float(c))

    @classmethod
    def trig(cls, terms: Sequence[Term], constant: float = 0.0, name: str = "trig") -> Potential:
        """Constant plus a sum of cos/sin terms, optionally modulated in time.

        Time-modulated terms must share one time frequency so the potential
        has a well-defined time period.
        """
        terms = tuple(terms)
        if not terms:
            return cls.constant_value(constant)
        tfreqs = {t.time_frequency for t in terms if t.time_shape is not None}
        if len(tfreqs) > 1:
            raise InvalidInput("time-modulated terms must share one time frequency")
        autonomous = not tfreqs
        period = None if autonomous else 2 * math.pi / abs(tfreqs.pop())
        bound = abs(constant) + sum(abs(t.amplitude) for t in terms)

        def evaluator(t, x):
            out = np.full(np.shape(x), float(constant))
            for term in terms:
                s = term.amplitude * _SHAPES[term.shape](term.frequency * x + term.phase)
                if term.time_shape is not None:
                    s = s * _SHAPES[term.time_shape](term.time_frequency * t)
                out = out + s
            return out

        return cls(evaluator, bound, period, autonomous, True, name, terms, float(constant))


@dataclass(frozen=True)
class HamiltonianSpec:
    """Kinetic conjugate per axis plus a potential."""

    kinetic: Kinetic | tuple
    potential: Potential = field(default_factory=Potential.zero)

    def __post_init__(self):
        kin = self.kinetic
        if isinstance(kin, (Mechanical, Tabulated)):
            kin = (kin,)
        kin = tuple(kin)
        if not kin or not all(isinstance(k, (Mechanical, Tabulated)) for k in kin):
            raise InvalidInput("kinetic part must be one separable 1-D conjugate per axis")
        object.__setattr__(self, "kinetic", kin)

    @property
    def ndim(self) -> int:
        return len(self.kinetic)

    @property
    def kinetic_1d(self) -> Kinetic:
        if self.ndim != 1:
            raise InvalidInput(f"expected a 1-D Hamiltonian, got {self.ndim} axes")
        return self.kinetic[0]

    @classmethod
    def mechanical(cls, drift=0.0, potential: Potential | None = None) -> HamiltonianSpec:
        drifts = np.atleast_1d(drift)
        kin = tuple(Mechanical(float(p)) for p in drifts)
        return cls(kin, potential if potential is not None else Potential.zero())
