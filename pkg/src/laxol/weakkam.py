"""Long-time behaviour of the fully discrete semigroup on periodic grids.

On a periodic grid one time period of the scheme is a (min,plus) linear map
``u -> u (x) C`` with a dense cost matrix ``C[y][x]`` (source ``y``, target
``x``). Its unique (min,plus) eigenvalue is the discrete effective
Hamiltonian: ``u_k - k * period * h_bar`` stays bounded for every bounded
``u_0``. Two estimators are provided: iterating the scheme and watching the
per-period increment, and Karp's minimum cycle mean on ``C``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .grid import GridFn, InvalidInput
from .hamiltonian import HamiltonianSpec
from .scheme import EvolutionTrace, SchemeParams, build_kernel, evolve

__all__ = [
    "Method",
    "EffectiveHEstimate",
    "MinPlusMatrix",
    "period_steps",
    "estimate_hbar_drift",
    "build_period_matrix",
    "eigenvalue_karp",
    "eigenvector",
    "estimate_hbar_matrix",
    "fixed_point_residual",
    "detect_eventual_periodicity",
    "minplus_matmul",
    "minplus_apply",
]

MAX_MATRIX_SIZE = 512


class Method(str, enum.Enum):
    DRIFT = "drift"
    MATRIX_EIGENVALUE = "matrix_eigenvalue"


@dataclass(frozen=True, eq=False)
class EffectiveHEstimate:
    """An estimate of the discrete effective Hamiltonian (value per unit time).

    ``bounds`` is a certified bracket ``lo <= h_bar_exact <= hi`` when the
    method provides one. ``state`` is the iterate or eigenvector the
    residual refers to, and ``residual`` is measured over ``cycle`` periods:
    ``|T^cycle u - u - cycle * period * h_bar|``.
    """

    h_bar: float
    method: Method
    n_steps: int
    residual: float
    converged: bool
    bounds: tuple[float, float] = (-math.inf, math.inf)
    state: GridFn | None = None
    cycle: int = 1


@dataclass(frozen=True, eq=False)
class MinPlusMatrix:
    """One-period transition costs ``costs[y, x]`` from source ``y`` to target ``x``."""

    costs: np.ndarray
    period: float
    steps: int

    def __post_init__(self):
        c = np.array(self.costs, dtype=np.float64, copy=True)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
            raise InvalidInput(f"cost matrix must be square and non-empty, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidInput("cost matrix entries must be finite")
        c.flags.writeable = False
        object.__setattr__(self, "costs", c)

    @property
    def size(self) -> int:
        return self.costs.shape[0]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``(u (x) C)[x] = min_y u[y] + C[y, x]``."""
        return minplus_apply(np.asarray(u, dtype=np.float64), self.costs)

    def __matmul__(self, other: MinPlusMatrix) -> MinPlusMatrix:
        return MinPlusMatrix(minplus_matmul(self.costs, other.costs),
                             self.period + other.period, self.steps + other.steps)


# --------------------------------------------------------------------------
# (min,plus) linear algebra


@njit(cache=True)
def _matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.full((n, m), np.inf)
    for i in range(n):
        row = out[i]
        for j in range(k):
            aij = a[i, j]
            brow = b[j]
            for x in range(m):
                v = aij + brow[x]
                if v < row[x]:
                    row[x] = v
    return out


def minplus_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidInput(f"incompatible shapes {a.shape} and {b.shape}")
    return _matmul(a, b)


def minplus_apply(u: np.ndarray, c: np.ndarray) -> np.ndarray:
    if u.ndim != 1 or c.shape[0] != u.size:
        raise InvalidInput(f"vector of size {u.size} does not match matrix of shape {c.shape}")
    return np.min(u[:, None] + c, axis=0)


@njit(cache=True)
def _karp(c):
    n = c.shape[0]
    d = np.empty((n + 1, n))
    pred = np.empty((n + 1, n), dtype=np.int64)
    d[0, :] = 0.0
    pred[0, :] = -1
    for k in range(1, n + 1):
        for x in range(n):
            best = np.inf
            arg = -1
            for y in range(n):
                v = d[k - 1, y] + c[y, x]
                if v < best:
                    best = v
                    arg = y
            d[k, x] = best
            pred[k, x] = arg
    lam = np.inf
    xstar = 0
    for x in range(n):
        worst = -np.inf
        for k in range(n):
            v = (d[n, x] - d[k, x]) / (n - k)
            if v > worst:
                worst = v
        if worst < lam:
            lam = worst
            xstar = x
    return lam, xstar, pred


def eigenvalue_karp(c: MinPlusMatrix | np.ndarray) -> float:
    """Minimum cycle mean of the digraph with arc weights ``c[y, x]``.

    With all entries finite the graph is complete, hence strongly connected,
    and this is the unique (min,plus) eigenvalue of ``c``.
    """
    costs = c.costs if isinstance(c, MinPlusMatrix) else MinPlusMatrix(c, 1.0, 1).costs
    lam, _, _ = _karp(np.ascontiguousarray(costs))
    return float(lam)


def eigenvector(c: MinPlusMatrix | np.ndarray, lam: float | None = None) -> np.ndarray:
    """A (min,plus) eigenvector ``v`` with ``v (x) c = v + lam``.

    Built as the row of the Kleene star of ``c - lam`` at a critical node,
    one whose cheapest reduced cycle has weight zero. Nodes repeated on the
    minimising walk from Karp's recursion are tried first.
    """
    costs = c.costs if isinstance(c, MinPlusMatrix) else MinPlusMatrix(c, 1.0, 1).costs
    costs = np.ascontiguousarray(costs)
    n = costs.shape[0]
    karp_lam, xstar, pred = _karp(costs)
    if lam is None:
        lam = karp_lam
    walk = [int(xstar)]
    for k in range(n, 0, -1):
        walk.append(int(pred[k, walk[-1]]))
    counts = np.bincount(walk, minlength=n)
    order = [v for v in dict.fromkeys(walk) if counts[v] > 1]
    order += [v for v in range(n) if counts[v] <= 1]
    reduced = costs - lam
    scale = max(1.0, float(np.max(np.abs(costs)))) * n
    best, best_gap = None, np.inf
    for node in order:
        dist = _star_row(reduced, node)
        gap = abs(dist[node])
        if gap <= 1e-12 * scale:
            return dist
        if gap < best_gap:
            best, best_gap = dist, gap
    return best


def _star_row(reduced: np.ndarray, node: int) -> np.ndarray:
    # cheapest walk of length >= 1 from node to every target
    dist = reduced[node].copy()
    for _ in range(reduced.shape[0]):
        nxt = np.minimum(dist, np.min(dist[:, None] + reduced, axis=0))
        if np.array_equal(nxt, dist):
            break
        dist = nxt
    return dist


# --------------------------------------------------------------------------
# periods


def period_steps(spec: HamiltonianSpec, params: SchemeParams) -> tuple[int, float]:
    """Steps per time period and the period length.

    Autonomous problems use a single step as their period. Time-periodic
    ones need ``tau`` to divide the potential's period.
    """
    pot = spec.potential
    if pot.autonomous:
        return 1, params.tau
    period = pot.time_period
    if period is None or not period > 0:
        raise InvalidInput("time-dependent potential without a time period")
    ell = int(round(period / params.tau))
    if ell < 1 or abs(ell * params.tau - period) > 1e-9 * period:
        raise InvalidInput(
            f"tau = {params.tau:g} is not a unit fraction of the time period {period:g}"
        )
    return ell, period


def _require_periodic(spec: HamiltonianSpec, params: SchemeParams) -> None:
    if not params.periodic:
        raise InvalidInput("effective Hamiltonians need a space-periodic grid")
    if spec.ndim != 1:
        raise InvalidInput("effective Hamiltonian estimators are one-dimensional")


def _run_period(u: GridFn, t: float, spec, params, ell, kernel, engine, threads) -> GridFn:
    return evolve(u, t, ell, spec, params, engine=engine, threads=threads,
                  snapshot_every=ell, kernel=kernel).final


def estimate_hbar_drift(u0: GridFn, spec: HamiltonianSpec, params: SchemeParams,
                        max_periods: int = 10_000, tol: float | None = None, *,
                        t0: float = 0.0, engine: str = "fast", threads: int = 1,
                        max_cycle: int | None = None) -> EffectiveHEstimate:
    """Estimate the effective Hamiltonian by iterating whole periods.

    For any ``c``, the increment over ``c`` periods brackets the eigenvalue:
    ``min(u_k - u_{k-c}) <= c * period * h_bar <= max(u_k - u_{k-c})``.
    Iterates become periodic after a transient, possibly with a cycle of
    several periods (a profile travelling around the grid, say). The run
    stops at the first ``k`` where some ``c <= max_cycle`` (default: grid
    size) gives a ``c``-period increment whose spread over the grid is below
    ``tol``, and returns its mean per unit time. Otherwise the estimate after
    ``max_periods`` is the mean increment over the second half of the run,
    clipped to the tightest bracket seen.
    """
    _require_periodic(spec, params)
    ell, period = period_steps(spec, params)
    if int(max_periods) != max_periods or max_periods < 1:
        raise InvalidInput(f"max_periods must be a positive integer, got {max_periods}")
    if tol is None:
        tol = 1e-8 if spec.potential.autonomous else 1e-6
    if not tol > 0:
        raise InvalidInput(f"tol must be positive, got {tol}")
    kernel = build_kernel(spec, params)
    kmax = int(max_periods)
    half = kmax // 2
    cmax = min(max_cycle or params.n_samples, kmax)
    ring = np.empty((cmax + 1, params.n_samples))
    ring[0] = u0.values
    lo, hi = -math.inf, math.inf
    u, mid = u0, u0
    for k in range(1, kmax + 1):
        u = _run_period(u, t0 + (k - 1) * period, spec, params, ell, kernel, engine, threads)
        ring[k % (cmax + 1)] = u.values
        cs = np.arange(1, min(k, cmax) + 1)
        incs = u.values[None, :] - ring[(k - cs) % (cmax + 1)]
        mins, maxs = incs.min(axis=1), incs.max(axis=1)
        total = u.values - u0.values
        lo = max(lo, float(np.max(mins / (cs * period))), float(total.min()) / (k * period))
        hi = min(hi, float(np.min(maxs / (cs * period))), float(total.max()) / (k * period))
        flat = np.nonzero(maxs - mins < tol)[0]
        if flat.size:
            c = int(cs[flat[0]])
            inc = incs[flat[0]]
            h = float(inc.mean()) / (c * period)
            res = float(np.max(np.abs(inc - h * c * period)))
            start = params.grid(ring[(k - c) % (cmax + 1)])
            return EffectiveHEstimate(h, Method.DRIFT, k * ell, res, True, (lo, hi), start, c)
        if k == half:
            mid = u
    h = float(np.mean(u.values - mid.values)) / (period * (kmax - half)) if kmax > half else float(
        np.mean(u.values - u0.values)) / (period * kmax)
    h = min(max(h, lo), hi)
    prev = params.grid(ring[(kmax - 1) % (cmax + 1)])
    res = float(np.max(np.abs(u.values - prev.values - h * period)))
    return EffectiveHEstimate(h, Method.DRIFT, kmax * ell, res, False, (lo, hi), prev)


def build_period_matrix(spec: HamiltonianSpec, params: SchemeParams, *, t0: float = 0.0,
                        max_size: int = MAX_MATRIX_SIZE) -> MinPlusMatrix:
    """Dense one-period cost matrix over the periodic grid.

    Each step contributes ``C_i[y, x] = k(x - y) - tau V(s_i, x)`` where
    ``k(r)`` is the cheapest kernel displacement congruent to ``r`` modulo
    the grid size; the period matrix is the (min,plus) product
    ``C_1 C_2 ... C_l``.
    """
    _require_periodic(spec, params)
    n = params.n_samples
    if n > max_size:
        raise InvalidInput(f"grid of {n} points exceeds the dense matrix limit {max_size}")
    ell, period = period_steps(spec, params)
    kernel = build_kernel(spec, params)
    kmin = np.full(n, np.inf)
    np.minimum.at(kmin, kernel.displacements % n, kernel.window.values)
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    circ = kmin[idx]
    x = params.coords
    pot = spec.potential
    total = None
    for i in range(ell):
        t = t0 + i * params.tau
        step = circ if pot.is_zero else circ - params.tau * pot(params.potential_time_for(t), x)[None, :]
        total = step if total is None else minplus_matmul(total, step)
    return MinPlusMatrix(total, period, ell)


def estimate_hbar_matrix(spec: HamiltonianSpec, params: SchemeParams, *, t0: float = 0.0,
                         max_size: int = MAX_MATRIX_SIZE) -> EffectiveHEstimate:
    """Effective Hamiltonian from the period matrix, with an exact eigenvector."""
    c = build_period_matrix(spec, params, t0=t0, max_size=max_size)
    lam = eigenvalue_karp(c)
    vec = eigenvector(c, lam)
    res = float(np.max(np.abs(c.apply(vec) - vec - lam)))
    h = lam / c.period
    return EffectiveHEstimate(h, Method.MATRIX_EIGENVALUE, c.steps, res, True, (h, h),
                              params.grid(vec))


def fixed_point_residual(u: GridFn, h_bar: float, spec: HamiltonianSpec, params: SchemeParams,
                         *, t0: float = 0.0, engine: str = "fast") -> float:
    """``|T u - u - period * h_bar|`` in sup-norm, ``T`` being one period of the scheme."""
    _require_periodic(spec, params)
    ell, period = period_steps(spec, params)
    out = _run_period(u, t0, spec, params, ell, build_kernel(spec, params), engine, 1)
    return float(np.max(np.abs(out.values - u.values - period * h_bar)))


def detect_eventual_periodicity(trace: EvolutionTrace, h_bar: float, tol: float = 1e-8, *,
                                period_steps: int = 1) -> tuple[int, int] | None:
    """Smallest ``(preperiod, period)``, in steps, of the drift-compensated snapshots.

    Snapshots ``w = u - steps * tau * h_bar`` are compared pairwise; only
    pairs a multiple of ``period_steps`` apart are considered, so
    time-periodic problems compare states at the same phase. Returns
    ``None`` if no pair agrees within ``tol`` in sup-norm.
    """
    steps = np.asarray(trace.snapshot_steps, dtype=np.int64)
    if steps.size < 2:
        return None
    w = np.stack([s.values for s in trace.snapshots]) - (steps * trace.tau * h_bar)[:, None]
    for j in range(1, steps.size):
        gaps = steps[j] - steps[:j]
        ok = gaps % period_steps == 0
        if not ok.any():
            continue
        cand = np.nonzero(ok)[0]
        dist = np.max(np.abs(w[cand] - w[j]), axis=1)
        hit = np.nonzero(dist < tol)[0]
        if hit.size:
            i = int(cand[hit[0]])
            return int(steps[i]), int(steps[j] - steps[i])
    return None
