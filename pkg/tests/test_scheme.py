import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from laxol import (
    EvaluationError,
    GridFn,
    HamiltonianSpec,
    InvalidInput,
    Mechanical,
    NonFiniteError,
    Potential,
    SchemeParams,
    Tabulated,
    Term,
    build_kernel,
    evolve,
    split_step_nd,
    step_fully_discrete,
    step_semidiscrete,
)
from laxol.scheme import default_stride

TWO_PI = 2 * math.pi
OSC = Potential.trig([Term(-1.0), Term(0.4, 2.0, "sin", time_shape="cos", time_frequency=3.0)], 1.0)


def brute_step(u, t, spec, params):
    """Minimum over every source point and every periodic image."""
    n, eps, tau = params.n_space, params.eps, params.tau
    kin = spec.kinetic_1d
    out = np.empty(n)
    for x in range(n):
        best = math.inf
        for y in range(n):
            for k in (-3, -2, -1, 0, 1, 2, 3):
                d = x - y + k * n
                best = min(best, u.values[y] + tau * float(kin.conjugate(d * eps / tau)))
        out[x] = best
    return out - tau * spec.potential(params.potential_time_for(t), params.coords)


# --------------------------------------------------------------------------
# parameters and kernels


def test_params_derived_quantities():
    p = SchemeParams(600, 0.04, length=TWO_PI, origin=-math.pi)
    assert p.eps == pytest.approx(TWO_PI / 600)
    assert p.n_samples == 600 and p.coords[0] == -math.pi
    q = SchemeParams(10, 0.5, length=1.0, periodic=False)
    assert q.n_samples == 11 and q.coords[-1] == pytest.approx(1.0)


def test_anti_cfl_condition():
    with pytest.raises(InvalidInput, match="anti-CFL"):
        SchemeParams(8, 0.05, length=1.0)  # eps / tau = 2.5
    with pytest.warns(UserWarning, match="anti-CFL"):
        SchemeParams(8, 0.05, length=1.0, cfl="warn")
    SchemeParams(8, 0.05, length=1.0, h0=3.0)


@pytest.mark.parametrize("kwargs", [
    {"n_space": 1, "tau": 1.0},
    {"n_space": 8, "tau": -1.0},
    {"n_space": 8, "tau": 1.0, "eta": -1e-3},
    {"n_space": 8, "tau": 1.0, "potential_time": "midpoint"},
    {"n_space": 8.5, "tau": 1.0},
])
def test_params_reject_bad_values(kwargs):
    with pytest.raises(InvalidInput):
        SchemeParams(**kwargs)


def test_kernel_centre_snaps_to_nearest_displacement():
    p = SchemeParams(600, 0.04, length=1.0)
    k = build_kernel(HamiltonianSpec.mechanical(1.0), p)
    assert k.first + k.argmin_index == 24  # tau * P / eps = 24
    assert k.halfwidth == 600 and len(k.window) == 1201


def test_kernel_from_tabulated_absolute_value():
    p = SchemeParams(20, 0.5, length=2.0, periodic=False, kernel_halfwidth=1.0)
    kin = Tabulated(np.array([-2.0, 0.0, 2.0]), np.array([2.0, 0.0, 2.0]))
    k = build_kernel(kin, p)
    assert np.allclose(k.window.values, np.abs(k.displacements * p.eps))


def test_tabulated_rejects_nonconvex_and_out_of_range():
    with pytest.raises(InvalidInput, match="not convex"):
        Tabulated(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 0.0]))
    kin = Tabulated(np.array([-1.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(InvalidInput, match="exceeds tabulated range"):
        build_kernel(kin, SchemeParams(8, 0.5, length=1.0))


# --------------------------------------------------------------------------
# one step


def test_constant_is_fixed_without_potential():
    p = SchemeParams(32, 0.25, length=1.0)
    u = p.grid(np.full(32, 3.5))
    assert np.array_equal(step_fully_discrete(u, 0.0, HamiltonianSpec.mechanical(0.0), p).values, u.values)


def test_attainable_drift_velocity():
    p = SchemeParams(32, 0.25, length=1.0)  # tau * P / eps = 16 for P = 2
    u = p.grid(np.zeros(32))
    out = step_fully_discrete(u, 0.0, HamiltonianSpec.mechanical(2.0), p)
    assert np.array_equal(out.values, np.full(32, -0.25 * 2.0 ** 2 / 2))


@pytest.mark.parametrize("drift", [0.0, 0.7, -1.3, 3.0])
@pytest.mark.parametrize("when", ["arrival", "departure"])
def test_step_matches_brute_force(drift, when):
    rng = np.random.default_rng(11)
    p = SchemeParams(24, 0.3, length=TWO_PI, potential_time=when)
    spec = HamiltonianSpec.mechanical(drift, OSC)
    u = p.grid(rng.normal(size=24))
    out = step_fully_discrete(u, 0.7, spec, p)
    assert np.allclose(out.values, brute_step(u, 0.7, spec, p), rtol=0, atol=1e-12)


@given(st.lists(st.integers(-50, 50), min_size=40, max_size=40), st.floats(-2, 2))
def test_fast_engine_equals_naive(vals, drift):
    p = SchemeParams(40, 0.2, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(drift, OSC)
    u = p.grid(np.asarray(vals, dtype=float) / 8)
    fast = step_fully_discrete(u, 0.0, spec, p, engine="fast")
    naive = step_fully_discrete(u, 0.0, spec, p, engine="naive")
    assert np.array_equal(fast.values, naive.values)


@given(st.lists(st.floats(-3, 3), min_size=32, max_size=32), st.lists(st.floats(0, 2), min_size=32, max_size=32),
       st.floats(-5, 5))
def test_order_preserving_nonexpansive_and_shift_equivariant(a, gap, c):
    p = SchemeParams(32, 0.25, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(0.5, OSC)
    u = p.grid(a)
    v = p.grid(np.asarray(a) + np.asarray(gap))
    tu, tv = step_fully_discrete(u, 0.1, spec, p), step_fully_discrete(v, 0.1, spec, p)
    assert np.all(tu.values <= tv.values + 1e-12)
    assert np.max(np.abs(tu.values - tv.values)) <= np.max(np.abs(u.values - v.values)) + 1e-12
    assert np.allclose(step_fully_discrete(u + c, 0.1, spec, p).values, tu.values + c, rtol=0, atol=1e-12)


@pytest.mark.parametrize("drift", [0.0, 1.0, -0.6])
def test_periodic_step_agrees_with_three_tiled_periods(drift):
    rng = np.random.default_rng(5)
    n = 30
    per = SchemeParams(n, 0.3, length=TWO_PI)
    line = SchemeParams(3 * n, 0.3, length=3 * TWO_PI, periodic=False)
    spec = HamiltonianSpec.mechanical(drift)
    u = per.grid(np.round(rng.normal(size=n) * 16) / 16)
    tiled = line.grid(np.concatenate([np.tile(u.values, 3), u.values[:1]]))
    out_line = step_fully_discrete(tiled, 0.0, spec, line)
    assert np.array_equal(step_fully_discrete(u, 0.0, spec, per).values, out_line.values[n : 2 * n])


def test_two_half_steps_dominate_one_double_step():
    # discrete Hopf-Lax: splitting a displacement over a grid midpoint never beats the straight move
    rng = np.random.default_rng(3)
    spec = HamiltonianSpec.mechanical(0.4)
    small = SchemeParams(64, 0.2, length=TWO_PI)
    big = SchemeParams(64, 0.4, length=TWO_PI)
    for _ in range(20):
        u = small.grid(rng.normal(size=64))
        twice = step_fully_discrete(step_fully_discrete(u, 0.0, spec, small), 0.2, spec, small)
        once = step_fully_discrete(u, 0.0, spec, big)
        assert np.all(twice.values >= once.values - 1e-12)


def test_nonperiodic_window_too_narrow():
    p = SchemeParams(20, 0.5, length=2.0, periodic=False, kernel_halfwidth=0.2)
    u = p.grid(np.zeros(21))
    with pytest.raises(InvalidInput, match="widen kernel_halfwidth"):
        step_fully_discrete(u, 0.0, HamiltonianSpec.mechanical(3.0), p)


def test_step_rejects_wrong_grid():
    p = SchemeParams(16, 0.5, length=1.0)
    with pytest.raises(InvalidInput, match="params expect"):
        step_fully_discrete(GridFn(np.zeros(17), 1 / 16), 0.0, HamiltonianSpec.mechanical(0.0), p)


def test_non_finite_potential_is_reported():
    bad = Potential(lambda t, x: np.where(x > 0.5, np.nan, 0.0), 1.0, name="holey")
    p = SchemeParams(16, 0.5, length=1.0)
    with pytest.raises(EvaluationError, match="holey"):
        step_fully_discrete(p.grid(np.zeros(16)), 0.0, HamiltonianSpec(Mechanical(0.0), bad), p)


# --------------------------------------------------------------------------
# straight-segment (semi-discrete) costs


def test_semidiscrete_without_potential_equals_fully_discrete():
    rng = np.random.default_rng(9)
    p = SchemeParams(32, 0.3, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(0.8)
    u = p.grid(rng.normal(size=32))
    assert np.allclose(step_semidiscrete(u, 0.0, spec, p, 3).values,
                       step_fully_discrete(u, 0.0, spec, p).values, rtol=0, atol=1e-13)


def test_semidiscrete_autonomous_difference_bounded():
    rng = np.random.default_rng(10)
    p = SchemeParams(32, 0.3, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(0.5, Potential.trig([Term(-1.0)], 1.0))
    u = p.grid(rng.normal(size=32))
    k = build_kernel(spec, p)
    lip = 1.0
    bound = p.tau * lip * np.max(np.abs(k.displacements)) * p.eps
    diff = step_semidiscrete(u, 0.0, spec, p, 16).values - step_fully_discrete(u, 0.0, spec, p).values
    assert np.max(np.abs(diff)) <= bound


def test_semidiscrete_quadrature_is_second_order():
    spec = HamiltonianSpec.mechanical(0.5, OSC)
    p = SchemeParams(32, 0.3, length=TWO_PI)
    u = p.sample(lambda x: np.sin(x) + 0.3 * np.cos(3 * x))
    ref = step_semidiscrete(u, 0.2, spec, p, 1024).values
    errs = [np.max(np.abs(step_semidiscrete(u, 0.2, spec, p, q).values - ref)) for q in (2, 4, 8, 16)]
    for a, b in zip(errs, errs[1:]):
        assert b <= 0.5 * a


def test_semidiscrete_rejects_zero_nodes():
    p = SchemeParams(8, 0.5, length=1.0)
    with pytest.raises(InvalidInput, match="quad_points"):
        step_semidiscrete(p.grid(np.zeros(8)), 0.0, HamiltonianSpec.mechanical(0.0), p, 0)


# --------------------------------------------------------------------------
# evolution


def test_evolve_keeps_initial_final_and_requested():
    p = SchemeParams(32, 0.25, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(1.0, OSC)
    u0 = p.sample(np.cos)
    trace = evolve(u0, 0.0, 3000, spec, p, record=[7])
    assert trace.snapshot_steps[0] == 0 and trace.snapshot_steps[-1] == 3000
    assert 7 in trace.snapshot_steps
    assert len(trace.blocks) == trace.n_steps == 3000
    assert default_stride(3000) == 3
    assert trace.times[-1] == pytest.approx(750.0)


def test_evolve_matches_repeated_steps():
    p = SchemeParams(32, 0.25, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(1.0, OSC)
    u = p.sample(np.cos)
    trace = evolve(u, 0.5, 5, spec, p)
    for i in range(5):
        u = step_fully_discrete(u, 0.5 + i * 0.25, spec, p)
        assert np.array_equal(trace.snapshots[i + 1].values, u.values)
    assert trace.drift[-1] == pytest.approx(np.mean(u.values - trace.snapshots[4].values))


def test_evolve_zero_steps():
    p = SchemeParams(16, 0.5, length=1.0)
    u0 = p.grid(np.arange(16.0))
    trace = evolve(u0, 0.0, 0, HamiltonianSpec.mechanical(0.0), p)
    assert trace.snapshot_steps == [0] and trace.final is u0


def test_evolve_blow_up_keeps_partial_trace():
    huge = Potential.trig([Term(1e307)], 0.0)
    p = SchemeParams(16, 0.5, length=TWO_PI)
    with pytest.raises(NonFiniteError) as info:
        evolve(p.grid(np.zeros(16)), 0.0, 500, HamiltonianSpec.mechanical(0.0, huge), p)
    trace = info.value.trace
    assert trace.aborted and 0 < trace.n_steps < 500


def test_evolve_thread_count_does_not_change_results():
    p = SchemeParams(200, 0.1, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(1.0, OSC)
    u0 = p.sample(lambda x: np.cos(5 * x) + 0.2 * np.sin(17 * x))
    one = evolve(u0, 0.0, 30, spec, p).final.values
    four = evolve(u0, 0.0, 30, spec, p, threads=4).final.values
    assert np.array_equal(one, four)


# --------------------------------------------------------------------------
# dimensional splitting


def test_split_step_in_one_dimension_is_the_plain_step():
    rng = np.random.default_rng(2)
    p = SchemeParams(32, 0.25, length=TWO_PI)
    spec = HamiltonianSpec.mechanical(0.5, OSC)
    u = rng.normal(size=32)
    assert np.array_equal(split_step_nd(u, 0.3, spec, p), step_fully_discrete(p.grid(u), 0.3, spec, p).values)


def test_split_step_matches_direct_minimum_on_small_grid():
    rng = np.random.default_rng(4)
    pot = Potential(lambda t, x, y: np.sin(x) * np.cos(y) + t, 2.0, autonomous=False, time_period=None)
    spec = HamiltonianSpec.mechanical((1.0, -2.0), pot)
    params = [SchemeParams(8, 0.5, length=2.0), SchemeParams(6, 0.5, length=1.5)]
    u = rng.integers(-9, 9, (8, 6)).astype(float)
    out = split_step_nd(u, 0.2, spec, params)
    n1, n2 = u.shape
    xs = np.meshgrid(params[0].coords, params[1].coords, indexing="ij")
    expect = np.full(u.shape, np.inf)
    for a in range(n1):
        for b in range(n2):
            for y1 in range(n1):
                for y2 in range(n2):
                    for k1 in (-1, 0, 1):
                        for k2 in (-1, 0, 1):
                            d1, d2 = a - y1 + k1 * n1, b - y2 + k2 * n2
                            cost = sum(p.tau * kin.conjugate(d * p.eps / p.tau)
                                       for kin, p, d in zip(spec.kinetic, params, (d1, d2)))
                            expect[a, b] = min(expect[a, b], u[y1, y2] + cost)
    expect -= 0.5 * pot(0.7, *xs)
    assert np.allclose(out, expect, rtol=0, atol=1e-12)


def test_split_step_thread_independent():
    rng = np.random.default_rng(8)
    spec = HamiltonianSpec.mechanical((0.3, 0.1))
    p = SchemeParams(24, 0.4, length=TWO_PI)
    u = rng.normal(size=(24, 24))
    assert np.array_equal(split_step_nd(u, 0.0, spec, p), split_step_nd(u, 0.0, spec, p, threads=3))


def test_split_step_rejects_mismatched_axes():
    with pytest.raises(InvalidInput, match="separable"):
        split_step_nd(np.zeros((4, 4)), 0.0, HamiltonianSpec.mechanical(0.0), SchemeParams(4, 1.0, length=1.0))
    with pytest.raises(InvalidInput, match="axis 1"):
        split_step_nd(np.zeros((4, 5)), 0.0, HamiltonianSpec.mechanical((0.0, 0.0)),
                      SchemeParams(4, 1.0, length=1.0))


def test_potential_bound_spot_check():
    pot = Potential.trig([Term(2.0)], 0.5)
    assert pot.bound == 2.5
    pot.spot_check(np.linspace(0, TWO_PI, 50))
    liar = Potential(lambda t, x: 3 * np.cos(x), 1.0, name="liar")
    with pytest.raises(InvalidInput, match="liar"):
        liar.spot_check(np.linspace(0, TWO_PI, 50))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert Potential.zero().is_zero and Potential.constant_value(0.0).is_zero
