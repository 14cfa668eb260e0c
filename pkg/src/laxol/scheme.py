"""Discrete Lax-Oleinik semigroups on uniform grids.

One step of the fully discrete scheme is

    u_next(x) = min_y [ u(y) + tau * K*((x - y) / tau) ] - tau * V(s, x)

over grid points ``y``; the minimum is a (min,plus)-convolution of ``u`` with
the sampled kernel ``d -> tau * K*(d * eps / tau)``. Periodic problems store
one period of ``u`` and a kernel window spanning two periods around the
kernel's minimiser, which loses nothing: any displacement outside that
window has a representative inside it that is no more expensive.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import GridFn, InvalidInput, NonFiniteError
from .hamiltonian import HamiltonianSpec, Kinetic
from .minplus import OpCounter, _conv_fast_values, _kernel_tolerance, _first_violation

logger = logging.getLogger(__name__)

ENGINES = ("fast", "naive")


@dataclass(frozen=True)
class SchemeParams:
    """Discretisation of one spatial axis plus the time step.

    Periodic grids hold ``n_space`` samples of a period of length ``length``
    starting at ``origin``; non-periodic grids hold ``n_space + 1`` samples
    of the closed interval ``[origin, origin + length]``.

    ``potential_time`` picks where ``V`` is sampled in a step from ``t`` to
    ``t + tau``: ``"arrival"`` (``t + tau``) or ``"departure"`` (``t``).
    ``cfl`` is ``"raise"`` or ``"warn"`` for violations of ``eps / tau < h0``.
    """

    n_space: int
    tau: float
    eta: float = 0.0
    h0: float = 1.0
    length: float = 1.0
    origin: float = 0.0
    periodic: bool = True
    potential_time: str = "arrival"
    cfl: str = "raise"
    kernel_halfwidth: float | None = None

    def __post_init__(self):
        if int(self.n_space) != self.n_space or self.n_space < 2:
            raise InvalidInput(f"n_space must be an integer >= 2, got {self.n_space}")
        object.__setattr__(self, "n_space", int(self.n_space))
        for name in ("tau", "h0", "length"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise InvalidInput(f"{name} must be positive and finite, got {val}")
        if not self.eta >= 0:
            raise InvalidInput(f"eta must be >= 0, got {self.eta}")
        if self.potential_time not in ("arrival", "departure"):
            raise InvalidInput(f"potential_time must be 'arrival' or 'departure', got {self.potential_time!r}")
        if self.cfl not in ("raise", "warn"):
            raise InvalidInput(f"cfl must be 'raise' or 'warn', got {self.cfl!r}")
        if self.kernel_halfwidth is not None and not self.kernel_halfwidth > 0:
            raise InvalidInput("kernel_halfwidth must be positive")
        ratio = self.eps / self.tau
        if not ratio < self.h0:
            msg = f"anti-CFL condition violated: eps/tau = {ratio:.4g} >= h0 = {self.h0:g}"
            if self.cfl == "raise":
                raise InvalidInput(msg)
            warnings.warn(msg, stacklevel=3)

    @property
    def eps(self) -> float:
        return self.length / self.n_space

    @property
    def n_samples(self) -> int:
        return self.n_space if self.periodic else self.n_space + 1

    @property
    def coords(self) -> np.ndarray:
        return self.origin + self.eps * np.arange(self.n_samples)

    @property
    def window_halfwidth(self) -> int:
        """Kernel half-width in grid steps."""
        if self.periodic or self.kernel_halfwidth is None:
            return self.n_space
        return max(1, int(round(self.kernel_halfwidth / self.eps)))

    def grid(self, values) -> GridFn:
        return GridFn(values, self.eps, self.origin, self.periodic)

    def sample(self, fn) -> GridFn:
        """Restrict a callable ``fn(x)`` to the grid."""
        return self.grid(np.asarray(fn(self.coords), dtype=np.float64))

    def potential_time_for(self, t: float) -> float:
        return t + self.tau if self.potential_time == "arrival" else t


@dataclass(frozen=True)
class Kernel:
    """Sampled ``d -> tau K*(d eps / tau)`` for ``d`` in ``first .. first + 2W``."""

    window: GridFn
    argmin_index: int
    first: int

    @property
    def halfwidth(self) -> int:
        return (len(self.window) - 1) // 2

    @property
    def displacements(self) -> np.ndarray:
        return self.first + np.arange(len(self.window))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_kernel(spec: HamiltonianSpec | Kinetic, params: SchemeParams, axis: int = 0) -> Kernel:
    """Sample the kinetic cost on a window of ``2W + 1`` displacements.

    The window is centred on the grid displacement nearest to
    ``tau * argmin K*``; for periodic grids ``W = n_space`` (two periods).
    """
    kin = spec.kinetic[axis] if isinstance(spec, HamiltonianSpec) else spec
    eps, tau = params.eps, params.tau
    centre = _round_half_up(tau * kin.argmin / eps)
    w = params.window_halfwidth
    if w < 1:
        raise InvalidInput("kernel window must hold at least two samples")
    disp = np.arange(centre - w, centre + w + 1)
    vals = tau * kin.conjugate(disp * eps / tau)
    window = GridFn(vals, eps, (centre - w) * eps)
    idx = _first_violation(window.values, False, _kernel_tolerance(window.values))
    if idx is not None:
        raise InvalidInput(f"kernel is not convex at window index {idx}")
    return Kernel(window, int(np.argmin(vals)), centre - w)


# --------------------------------------------------------------------------
# one step


def _naive_values(f: np.ndarray, u: np.ndarray) -> np.ndarray:
    h = np.full(f.size + u.size - 1, np.inf)
    for j in range(u.size):
        np.minimum(h[j : j + f.size], f + u[j], out=h[j : j + f.size])
    return h


def _periodic_reduce(h: np.ndarray, first: int, n: int) -> np.ndarray:
    # h[k] belongs to target index first + k; fold onto 0..n-1
    r0 = first % n
    rows = -(-(r0 + h.size) // n)
    buf = np.full(rows * n, np.inf)
    buf[r0 : r0 + h.size] = h
    return buf.reshape(rows, n).min(axis=0)


def _interval_restrict(h: np.ndarray, first: int, n: int) -> np.ndarray:
    lo = -first
    if lo < 0 or lo + n > h.size:
        raise InvalidInput("kernel window does not cover every target point; widen kernel_halfwidth")
    return h[lo : lo + n]


def _kinetic_values(u: np.ndarray, kernel: Kernel, periodic: bool, eta: float,
                    engine: str = "fast", threads: int = 1,
                    counter: OpCounter | None = None) -> tuple[np.ndarray, int]:
    f = kernel.window.values
    if engine == "fast":
        h, nblocks = _conv_fast_values(f, u, eta, threads, counter)
    elif engine == "naive":
        h, nblocks = _naive_values(f, u), 0
    else:
        raise InvalidInput(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if periodic:
        return _periodic_reduce(h, kernel.first, u.size), nblocks
    return _interval_restrict(h, kernel.first, u.size), nblocks


def _check_grid(u: GridFn, params: SchemeParams) -> None:
    if len(u) != params.n_samples or u.periodic != params.periodic:
        raise InvalidInput(
            f"grid function has {len(u)} samples (periodic={u.periodic}); params expect "
            f"{params.n_samples} (periodic={params.periodic})"
        )


def _step_values(u: GridFn, t: float, spec: HamiltonianSpec, params: SchemeParams, kernel: Kernel,
                 engine: str, threads: int, counter, vcache=None) -> tuple[np.ndarray, int]:
    vals, nblocks = _kinetic_values(u.values, kernel, params.periodic, params.eta,
                                    engine, threads, counter)
    pot = spec.potential
    if pot.is_zero:
        return vals, nblocks
    if vcache is not None and pot.autonomous:
        tv = vcache
    else:
        tv = params.tau * pot(params.potential_time_for(t), u.coords)
    with np.errstate(over="ignore", invalid="ignore"):  # callers check finiteness
        return vals - tv, nblocks


def step_fully_discrete(u: GridFn, t: float, spec: HamiltonianSpec, params: SchemeParams,
                        kernel: Kernel | None = None, *, engine: str = "fast", threads: int = 1,
                        counter: OpCounter | None = None) -> GridFn:
    """Apply one step of the fully discrete semigroup from time ``t``."""
    _check_grid(u, params)
    if kernel is None:
        kernel = build_kernel(spec, params)
    vals, _ = _step_values(u, t, spec, params, kernel, engine, threads, counter)
    return u.with_values(vals)


def step_semidiscrete(u: GridFn, t: float, spec: HamiltonianSpec, params: SchemeParams,
                      quad_points: int, kernel: Kernel | None = None) -> GridFn:
    """One step with the straight-segment action cost, by direct minimisation.

    The kinetic part integrates exactly to ``tau K*((x - y) / tau)``; the
    potential is integrated along the segment from ``(t, y)`` to
    ``(t + tau, x)`` by the composite trapezoid rule on ``quad_points + 1``
    nodes. Cost is ``O(N * W * quad_points)``; meant for small grids.
    """
    if int(quad_points) != quad_points or quad_points < 1:
        raise InvalidInput(f"quad_points must be an integer >= 1, got {quad_points}")
    _check_grid(u, params)
    if kernel is None:
        kernel = build_kernel(spec, params)
    q = int(quad_points)
    n = len(u)
    eps, tau = params.eps, params.tau
    x = u.coords
    pot = spec.potential
    frac = np.arange(q + 1) / q  # fraction of the step elapsed at each node
    wts = np.full(q + 1, 1.0 / q)
    wts[0] = wts[-1] = 0.5 / q
    out = np.full(n, np.inf)
    targets = np.arange(n)
    for d, kin in zip(kernel.displacements, kernel.window.values):
        src = targets - d
        if params.periodic:
            src = src % n
            ok = slice(None)
        else:
            ok = (src >= 0) & (src < n)
            if not ok.any():
                continue
            src = src[ok]
        xt = x[ok]
        if pot.is_zero:
            integral = 0.0
        else:
            # position at node s: arrival point minus the part of d still to travel
            pos = xt[None, :] - d * eps * (1.0 - frac[:, None])
            vals = np.stack([pot(t + fr * tau, pos[i]) for i, fr in enumerate(frac)])
            integral = tau * (wts @ vals)
        cand = u.values[src] + (kin - integral)
        out[ok] = np.minimum(out[ok], cand)
    return u.with_values(out)


# --------------------------------------------------------------------------
# evolution


@dataclass
class EvolutionTrace:
    """Snapshots of an evolution plus per-step statistics.

    ``blocks[i]``, ``wall[i]`` and ``drift[i]`` describe step ``i`` (from
    ``t0 + i tau`` to ``t0 + (i + 1) tau``); ``drift`` is the mean increment.
    Snapshot ``k`` is the state after ``snapshot_steps[k]`` steps.
    """

    t0: float
    tau: float
    snapshot_steps: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    blocks: list = field(default_factory=list)
    wall: list = field(default_factory=list)
    drift: list = field(default_factory=list)
    aborted: bool = False

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.tau * np.asarray(self.snapshot_steps, dtype=np.float64)

    @property
    def n_steps(self) -> int:
        return len(self.blocks)

    @property
    def final(self) -> GridFn:
        return self.snapshots[-1]

    def __len__(self) -> int:
        return len(self.snapshots)


def default_stride(steps: int) -> int:
    return 1 if steps <= 1024 else -(-steps // 1024)


def evolve(u0: GridFn, t0: float, steps: int, spec: HamiltonianSpec, params: SchemeParams, *,
           engine: str = "fast", threads: int = 1, snapshot_every: int | None = None,
           kernel: Kernel | None = None, record: Sequence[int] | None = None) -> EvolutionTrace:
    """Iterate the fully discrete step ``steps`` times from ``(t0, u0)``.

    Snapshots are kept every ``snapshot_every`` steps (default: all when
    ``steps <= 1024``, else about 1024 of them), plus any step listed in
    ``record``; the initial and final states are always kept. On non-finite
    values a NonFiniteError carrying the partial trace is raised.
    """
    if int(steps) != steps or steps < 0:
        raise InvalidInput(f"steps must be a non-negative integer, got {steps}")
    _check_grid(u0, params)
    steps = int(steps)
    if engine not in ENGINES:
        raise InvalidInput(f"unknown engine {engine!r}; expected one of {ENGINES}")
    if kernel is None:
        kernel = build_kernel(spec, params)
    stride = snapshot_every or default_stride(steps)
    extra = set(int(k) for k in (record or ()))
    trace = EvolutionTrace(float(t0), params.tau)
    trace.snapshot_steps.append(0)
    trace.snapshots.append(u0)
    pot = spec.potential
    vcache = None
    if pot.autonomous and not pot.is_zero:
        vcache = params.tau * pot(params.potential_time_for(t0), u0.coords)
    u = u0
    for i in range(steps):
        t = t0 + i * params.tau
        start = time.perf_counter()
        vals, nblocks = _step_values(u, t, spec, params, kernel, engine, threads, None, vcache)
        elapsed = time.perf_counter() - start
        if not np.all(np.isfinite(vals)):
            trace.aborted = True
            raise NonFiniteError(f"non-finite values after step {i + 1} (t={t + params.tau:g})", trace)
        trace.blocks.append(nblocks)
        trace.wall.append(elapsed)
        with np.errstate(over="ignore"):
            trace.drift.append(float(np.mean(vals - u.values)))
        u = u.with_values(vals)
        k = i + 1
        if k % stride == 0 or k == steps or k in extra:
            trace.snapshot_steps.append(k)
            trace.snapshots.append(u)
    return trace


# --------------------------------------------------------------------------
# dimensional splitting


def _axis_params(params, ndim: int) -> list[SchemeParams]:
    if isinstance(params, SchemeParams):
        return [params] * ndim
    params = list(params)
    if len(params) != ndim:
        raise InvalidInput(f"expected {ndim} per-axis params, got {len(params)}")
    taus = {p.tau for p in params}
    if len(taus) != 1:
        raise InvalidInput("all axes must share one time step")
    return params


def split_step_nd(u: np.ndarray, t: float, spec: HamiltonianSpec, params, *,
                  engine: str = "fast", threads: int = 1) -> np.ndarray:
    """One fully discrete step in ``n`` dimensions by successive 1-D sweeps.

    For separable ``K*`` the ``n``-dimensional minimum over the product grid
    equals the composition of 1-D minima along each axis (ascending axis
    order here); the potential is subtracted once at the end.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != spec.ndim:
        raise InvalidInput(
            f"array has {u.ndim} axes but the Hamiltonian has {spec.ndim} separable kinetic parts"
        )
    if not np.all(np.isfinite(u)):
        raise InvalidInput("grid values must be finite")
    plist = _axis_params(params, u.ndim)
    for ax, p in enumerate(plist):
        if u.shape[ax] != p.n_samples:
            raise InvalidInput(f"axis {ax} has {u.shape[ax]} samples, params expect {p.n_samples}")
    out = u
    for ax, p in enumerate(plist):
        kernel = build_kernel(spec, p, axis=ax)
        moved = np.moveaxis(out, ax, -1)
        fibers = moved.reshape(-1, moved.shape[-1])

        def sweep(row, kernel=kernel, p=p):
            return _kinetic_values(np.ascontiguousarray(row), kernel, p.periodic, p.eta, engine)[0]

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                rows = list(pool.map(sweep, fibers))
        else:
            rows = [sweep(row) for row in fibers]
        out = np.moveaxis(np.stack(rows).reshape(moved.shape), -1, ax)
    pot = spec.potential
    if not pot.is_zero:
        grids = np.meshgrid(*(p.coords for p in plist), indexing="ij")
        out = out - plist[0].tau * pot(plist[0].potential_time_for(t), *grids)
    return np.ascontiguousarray(out)
