"""(min,plus)-convolution of sampled piecewise-linear functions.

Functions live on integer grids ``0..n`` (``+inf`` elsewhere) and slopes are
differences of consecutive samples. The fast path splits the non-kernel
operand into maximal convex/concave runs and convolves the convex kernel
with each run in linear time:

* convex x convex: merge the two slope sequences by increasing slope;
* convex x concave: a convex prefix, a concave middle made of the concave
  operand's segments, and a convex suffix, located with one pointer into
  the kernel that only moves down while the concave slopes decrease.

Every value written by the fast kernels is an actual sum ``f[i] + g[j]`` with
``i + j = k``, so the fast results can only be above the exact convolution,
and coincide with it when the run kinds hold exactly (``eta = 0``).
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .grid import GridFn, InvalidInput, _steps_match

__all__ = [
    "BlockKind",
    "Block",
    "BlockDecomposition",
    "OpCounter",
    "conv_naive",
    "conv_convex_convex",
    "conv_convex_concave",
    "decompose",
    "conv_fast",
    "min_pointwise",
]

CONVEX = 0
CONCAVE = 1


class BlockKind(enum.IntEnum):
    CONVEX = CONVEX
    CONCAVE = CONCAVE


@dataclass(frozen=True)
class Block:
    kind: BlockKind
    start: int
    end: int  # inclusive

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class BlockDecomposition:
    """Tiling of ``0..n`` by maximal convex/concave runs.

    Adjacent blocks share their boundary sample.
    """

    blocks: tuple[Block, ...]
    tolerance: float

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def kinds(self) -> list[BlockKind]:
        return [b.kind for b in self.blocks]


@dataclass
class OpCounter:
    """Accumulates index operations and block counts across fast convolutions."""

    ops: int = 0
    blocks: int = 0
    calls: int = 0
    per_call: list = field(default_factory=list)

    def add(self, ops: int, blocks: int) -> None:
        self.ops += int(ops)
        self.blocks += int(blocks)
        self.calls += 1
        self.per_call.append((int(ops), int(blocks)))


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _merge_convex(f, g, h, off):
    # h[off + k] <- min(h[off + k], f (*) g (k)), slopes merged in increasing order
    n = f.size - 1
    m = g.size - 1
    i = 0
    j = 0
    v = f[0] + g[0]
    if v < h[off]:
        h[off] = v
    while i + j < n + m:
        if i != n and (j == m or f[i + 1] - f[i] < g[j + 1] - g[j]):
            i += 1
        else:
            j += 1
        v = f[i] + g[j]
        k = off + i + j
        if v < h[k]:
            h[k] = v
    return n + m


@njit(cache=True, nogil=True)
def _merge_concave(f, g, h, off):
    # f convex, g concave; h[off + k] <- min(h[off + k], f (*) g (k))
    n = f.size - 1
    m = g.size - 1
    ops = 0
    i = 0
    v = f[0] + g[0]
    if v < h[off]:
        h[off] = v
    if m == 0:
        for i in range(1, n + 1):
            v = f[i] + g[0]
            if v < h[off + i]:
                h[off + i] = v
        return n
    # convex prefix: kernel pieces flatter than the first concave slope
    rho = g[1] - g[0]
    while i < n and f[i + 1] - f[i] <= rho:
        i += 1
        ops += 1
        v = f[i] + g[0]
        if v < h[off + i]:
            h[off + i] = v
    # concave middle: segment j sits after the kernel pieces flatter than it
    for j in range(1, m + 1):
        rho = g[j] - g[j - 1]
        while i > 0 and rho < f[i] - f[i - 1]:
            i -= 1
            ops += 1
        ops += 1
        v = f[i] + g[j - 1]
        if v < h[off + i + j - 1]:
            h[off + i + j - 1] = v
        v = f[i] + g[j]
        if v < h[off + i + j]:
            h[off + i + j] = v
    # convex suffix: remaining kernel pieces after the last segment
    while i < n:
        i += 1
        ops += 1
        v = f[i] + g[m]
        if v < h[off + i + m]:
            h[off + i + m] = v
    return ops


@njit(cache=True, nogil=True)
def _decompose(u, eta):
    n = u.size - 1
    kinds = np.empty(max(n, 1), dtype=np.int64)
    starts = np.empty(max(n, 1), dtype=np.int64)
    ends = np.empty(max(n, 1), dtype=np.int64)
    if n == 0:
        kinds[0] = CONVEX
        starts[0] = 0
        ends[0] = 0
        return kinds, starts, ends
    c = 0
    a = 0
    while a < n:
        kind = CONVEX
        decided = False
        b = a + 1
        while b < n:
            d = (u[b + 1] - u[b]) - (u[b] - u[b - 1])
            if not decided:
                # increments inside [-eta, eta] fit either kind
                if d > eta:
                    decided = True
                elif d < -eta:
                    kind = CONCAVE
                    decided = True
            elif (kind == CONVEX and d < -eta) or (kind == CONCAVE and d > eta):
                break
            b += 1
        kinds[c] = kind
        starts[c] = a
        ends[c] = b
        c += 1
        a = b
    return kinds[:c], starts[:c], ends[:c]


@njit(cache=True, nogil=True)
def _conv_blocks(f, u, kinds, starts, ends, out):
    ops = 0
    for b in range(kinds.size):
        g = u[starts[b] : ends[b] + 1]
        if kinds[b] == CONVEX:
            ops += _merge_convex(f, g, out, starts[b])
        else:
            ops += _merge_concave(f, g, out, starts[b])
    return ops


# --------------------------------------------------------------------------
# validation helpers


def _check_steps(f: GridFn, g: GridFn) -> None:
    if not _steps_match(f.step, g.step):
        raise InvalidInput(f"grid steps differ: {f.step!r} vs {g.step!r}")


def _first_violation(values: np.ndarray, concave: bool, tol: float = 0.0):
    inc = np.diff(values, 2)
    bad = inc > tol if concave else inc < -tol
    if bad.any():
        return int(np.argmax(bad)) + 1
    return None


def _require_shape(fn: GridFn, concave: bool, name: str, tol: float = 0.0) -> None:
    idx = _first_violation(fn.values, concave, tol)
    if idx is not None:
        kind = "concave" if concave else "convex"
        raise InvalidInput(f"{name} is not {kind}: slope increment violates at index {idx}")


def _result(values: np.ndarray, f: GridFn, g: GridFn) -> GridFn:
    return GridFn(values, f.step, f.origin + g.origin)


# --------------------------------------------------------------------------
# public operations


def conv_naive(f: GridFn, g: GridFn) -> GridFn:
    """Quadratic-cost (min,plus)-convolution; ground truth for the fast paths."""
    _check_steps(f, g)
    a, b = f.values, g.values
    if a.size < b.size:
        a, b = b, a
    h = np.full(a.size + b.size - 1, np.inf)
    for j in range(b.size):
        np.minimum(h[j : j + a.size], a + b[j], out=h[j : j + a.size])
    return _result(h, f, g)


def conv_convex_convex(f: GridFn, g: GridFn) -> GridFn:
    """Convolution of two convex functions by slope merging.

    Raises InvalidInput (with the first violating index) when either operand
    has a decreasing slope.
    """
    _check_steps(f, g)
    _require_shape(f, False, "f")
    _require_shape(g, False, "g")
    h = np.full(f.values.size + g.values.size - 1, np.inf)
    _merge_convex(f.values, g.values, h, 0)
    return _result(h, f, g)


def conv_convex_concave(f: GridFn, g: GridFn) -> GridFn:
    """Convolution of a convex ``f`` with a concave ``g`` in ``O(n + m)``."""
    _check_steps(f, g)
    _require_shape(f, False, "f")
    _require_shape(g, True, "g")
    h = np.full(f.values.size + g.values.size - 1, np.inf)
    _merge_concave(f.values, g.values, h, 0)
    return _result(h, f, g)


def decompose(u: GridFn, eta: float = 0.0) -> BlockDecomposition:
    """Split ``u`` into maximal convex and concave runs.

    A run's kind is fixed by its first slope increment outside ``[-eta, eta]``;
    runs with no such increment are convex. Convex runs then extend while
    increments stay ``>= -eta``, concave runs while they stay ``<= eta``.
    A run ends at the sample carrying the first increment of the wrong sign,
    which becomes the shared boundary with the next run. Extending every run
    as far as it goes yields the fewest blocks. An isolated kink therefore
    shows up as the junction of two runs of the opposite kind rather than as
    a block of its own.
    """
    if eta < 0:
        raise InvalidInput(f"tolerance must be >= 0, got {eta}")
    kinds, starts, ends = _decompose(u.values, float(eta))
    blocks = tuple(
        Block(BlockKind(int(k)), int(s), int(e)) for k, s, e in zip(kinds, starts, ends)
    )
    return BlockDecomposition(blocks, float(eta))


def _kernel_tolerance(values: np.ndarray) -> float:
    return 64 * np.finfo(np.float64).eps * float(np.max(np.abs(values)))


def conv_fast(
    kernel: GridFn,
    u: GridFn,
    eta: float = 0.0,
    *,
    threads: int = 1,
    counter: OpCounter | None = None,
    check_kernel: bool = True,
) -> tuple[GridFn, int]:
    """Convolve a convex ``kernel`` with an arbitrary ``u`` in ``O(c (n + m))``.

    Returns the convolution and the number ``c`` of blocks ``u`` was split
    into. With ``eta > 0`` nearly convex (concave) runs are treated as convex
    (concave); the result is then an upper bound of the exact convolution.
    Blocks may be convolved on ``threads`` worker threads; the final minimum
    is exact, so the output does not depend on the thread count.
    """
    _check_steps(kernel, u)
    if check_kernel:
        # rounding in sampled affine kernels leaves increments of a few ulps
        _require_shape(kernel, False, "kernel", _kernel_tolerance(kernel.values))
    res, nblocks = _conv_fast_values(kernel.values, u.values, eta, threads, counter)
    return _result(res, kernel, u), nblocks


def _conv_fast_values(f, u, eta, threads=1, counter=None):
    if eta < 0:
        raise InvalidInput(f"tolerance must be >= 0, got {eta}")
    kinds, starts, ends = _decompose(u, float(eta))
    out = np.full(f.size + u.size - 1, np.inf)
    nb = kinds.size
    if threads <= 1 or nb < 2:
        ops = _conv_blocks(f, u, kinds, starts, ends, out)
    else:
        chunks = np.array_split(np.arange(nb), min(threads, nb))

        def work(idx):
            part = np.full(out.size, np.inf)
            k = _conv_blocks(f, u, kinds[idx], starts[idx], ends[idx], part)
            return part, k

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
        ops = 0
        for part, k in parts:  # fixed reduction order
            np.minimum(out, part, out=out)
            ops += k
    if counter is not None:
        counter.add(ops, nb)
    return out, nb


def min_pointwise(fns) -> GridFn:
    """Pointwise minimum of ``(GridFn, offset)`` pairs placed on a common index axis.

    The union of the index ranges must be contiguous, since gaps would be
    ``+inf``. The result's origin is taken from the first function.
    """
    fns = list(fns)
    if not fns:
        raise InvalidInput("min_pointwise needs at least one function")
    first, off0 = fns[0]
    for fn, off in fns:
        _check_steps(first, fn)
        if int(off) != off:
            raise InvalidInput(f"offsets must be integers, got {off!r}")
    lo = min(int(off) for _, off in fns)
    hi = max(int(off) + len(fn) for fn, off in fns)
    out = np.full(hi - lo, np.inf)
    for fn, off in fns:
        s = int(off) - lo
        np.minimum(out[s : s + len(fn)], fn.values, out=out[s : s + len(fn)])
    if not np.all(np.isfinite(out)):
        gap = int(np.argmax(~np.isfinite(out))) + lo
        raise InvalidInput(f"index ranges leave a gap at index {gap}")
    return GridFn(out, first.step, first.origin + (lo - int(off0)) * first.step)
