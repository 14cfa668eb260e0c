import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from laxol import (
    HamiltonianSpec,
    InvalidInput,
    MinPlusMatrix,
    Potential,
    SchemeParams,
    Term,
    build_period_matrix,
    detect_eventual_periodicity,
    eigenvalue_karp,
    eigenvector,
    estimate_hbar_drift,
    estimate_hbar_matrix,
    evolve,
    fixed_point_residual,
    step_fully_discrete,
)
from laxol.weakkam import minplus_apply, minplus_matmul, period_steps

TWO_PI = 2 * math.pi
UNIT = SchemeParams(32, 0.25, length=1.0)  # tau * P / eps = 8 P


def min_simple_cycle_mean(c):
    n = c.shape[0]
    best = math.inf
    for r in range(1, n + 1):
        for cyc in itertools.permutations(range(n), r):
            if cyc[0] != min(cyc):
                continue
            w = sum(c[cyc[i], cyc[(i + 1) % r]] for i in range(r))
            best = min(best, w / r)
    return best


def run1(n):
    spec = HamiltonianSpec.mechanical(1.0, Potential.trig([Term(-1.0)], 1.0))
    params = SchemeParams(n, math.sqrt(TWO_PI / n), length=TWO_PI, origin=-math.pi)
    return spec, params, params.sample(lambda x: np.cos(2 * x))


# --------------------------------------------------------------------------
# Karp and (min,plus) algebra


def test_karp_small_examples():
    assert eigenvalue_karp(np.zeros((4, 4))) == 0.0
    assert eigenvalue_karp(np.array([[0.0, 5.0], [1.0, 0.0]])) == 0.0
    assert eigenvalue_karp(np.array([[4.0, 1.0], [1.0, 4.0]])) == 1.0
    assert eigenvalue_karp(np.array([[7.0]])) == 7.0


@pytest.mark.parametrize("n", range(1, 8))
def test_karp_equals_simple_cycle_enumeration(n):
    rng = np.random.default_rng(n)
    for _ in range(15):
        c = rng.integers(-10, 10, (n, n)).astype(float)
        assert eigenvalue_karp(c) == pytest.approx(min_simple_cycle_mean(c), abs=1e-12)


def test_karp_equals_enumeration_size_eight():
    rng = np.random.default_rng(88)
    c = rng.normal(size=(8, 8))
    assert eigenvalue_karp(c) == pytest.approx(min_simple_cycle_mean(c), abs=1e-12)


@given(st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_eigenvector_satisfies_eigen_equation(n, seed):
    c = np.random.default_rng(seed).integers(-20, 20, (n, n)).astype(float)
    lam = eigenvalue_karp(c)
    v = eigenvector(c, lam)
    assert np.max(np.abs(minplus_apply(v, c) - v - lam)) <= 1e-9


def test_matrix_guards():
    with pytest.raises(InvalidInput, match="square"):
        MinPlusMatrix(np.zeros((2, 3)), 1.0, 1)
    with pytest.raises(InvalidInput, match="finite"):
        MinPlusMatrix(np.array([[0.0, np.inf], [0.0, 0.0]]), 1.0, 1)
    with pytest.raises(InvalidInput, match="incompatible"):
        minplus_matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_minplus_product_is_associative():
    rng = np.random.default_rng(1)
    a, b, c = (rng.normal(size=(6, 6)) for _ in range(3))
    left = minplus_matmul(minplus_matmul(a, b), c)
    right = minplus_matmul(a, minplus_matmul(b, c))
    assert np.allclose(left, right, rtol=0, atol=1e-12)


# --------------------------------------------------------------------------
# period matrices


def test_one_step_matrix_is_circulant_kernel_without_potential():
    p = SchemeParams(16, 0.5, length=2.0)
    spec = HamiltonianSpec.mechanical(0.0)
    c = build_period_matrix(spec, p).costs
    eps, tau = p.eps, p.tau
    for y in range(16):
        for x in range(16):
            best = min(tau * 0.5 * ((x - y + k * 16) * eps / tau) ** 2 for k in (-2, -1, 0, 1, 2))
            assert c[y, x] == pytest.approx(best, abs=1e-15)
    assert np.array_equal(np.roll(np.roll(c, 3, axis=0), 3, axis=1), c)


def test_matrix_vector_product_equals_period_of_steps():
    rng = np.random.default_rng(12)
    pot = Potential.trig([Term(0.8, 2 * TWO_PI, time_shape="sin", time_frequency=TWO_PI)], 0.3)
    spec = HamiltonianSpec.mechanical(0.7, pot)
    p = SchemeParams(32, 0.125, length=1.0)
    assert period_steps(spec, p) == (8, 1.0)
    c = build_period_matrix(spec, p, t0=0.0)
    u = p.grid(rng.normal(size=32))
    stepped = u
    for i in range(8):
        stepped = step_fully_discrete(stepped, i * 0.125, spec, p)
    assert np.allclose(c.apply(u.values), stepped.values, rtol=0, atol=1e-12)


def test_reassociated_per_step_factors_agree():
    spec, p, _ = run1(32)
    one = build_period_matrix(spec, p)
    two = (one @ one) @ one
    three = one @ (one @ one)
    assert np.allclose(two.costs, three.costs, rtol=0, atol=1e-12)
    assert two.steps == 3 and two.period == pytest.approx(3 * p.tau)


def test_matrix_size_guard():
    p = SchemeParams(600, 0.05, length=1.0)
    with pytest.raises(InvalidInput, match="dense matrix limit"):
        build_period_matrix(HamiltonianSpec.mechanical(0.0), p)


def test_tau_must_divide_time_period():
    pot = Potential.trig([Term(1.0, time_shape="sin")])  # period 2 pi
    with pytest.raises(InvalidInput, match="unit fraction"):
        estimate_hbar_drift(UNIT.grid(np.zeros(32)), HamiltonianSpec.mechanical(0.0, pot), UNIT)


def test_interval_grids_are_rejected():
    p = SchemeParams(16, 0.5, length=1.0, periodic=False)
    with pytest.raises(InvalidInput, match="periodic"):
        build_period_matrix(HamiltonianSpec.mechanical(0.0), p)


# --------------------------------------------------------------------------
# effective Hamiltonian estimates


@pytest.mark.parametrize("spec, expected", [
    (HamiltonianSpec.mechanical(0.0), 0.0),
    (HamiltonianSpec.mechanical(0.0, Potential.constant_value(2.5)), -2.5),
    (HamiltonianSpec.mechanical(1.0), -0.5),
    (HamiltonianSpec.mechanical(-2.0), -2.0),
])
def test_analytic_effective_hamiltonians(spec, expected):
    u0 = UNIT.sample(lambda x: np.cos(2 * np.pi * x))
    drift = estimate_hbar_drift(u0, spec, UNIT)
    matrix = estimate_hbar_matrix(spec, UNIT)
    assert drift.converged
    assert drift.h_bar == pytest.approx(expected, abs=1e-10)
    assert matrix.h_bar == pytest.approx(expected, abs=1e-10)
    lo, hi = drift.bounds
    assert lo <= expected + 1e-12 and expected - 1e-12 <= hi


def test_constant_start_is_fixed_after_one_period():
    u0 = UNIT.grid(np.full(32, 4.0))
    est = estimate_hbar_drift(u0, HamiltonianSpec.mechanical(0.0), UNIT)
    assert est.h_bar == 0.0 and est.residual == 0.0 and est.n_steps == 1


@pytest.mark.parametrize("n", [32, 64, 128])
def test_estimators_agree_on_oscillating_potential(n):
    spec, p, u0 = run1(n)
    drift = estimate_hbar_drift(u0, spec, p, max_periods=50_000)
    karp = estimate_hbar_matrix(spec, p)
    assert drift.converged
    assert abs(drift.h_bar - karp.h_bar) < 1e-8
    assert karp.residual < 1e-10


def test_estimate_independent_of_initial_data():
    spec, p, _ = run1(64)
    a = estimate_hbar_drift(p.sample(np.sin), spec, p, max_periods=50_000)
    b = estimate_hbar_drift(p.sample(lambda x: 3 * np.cos(5 * x) + x ** 2), spec, p, max_periods=50_000)
    assert abs(a.h_bar - b.h_bar) < 2e-8


def test_time_periodic_estimators_agree():
    pot = Potential.trig([Term(0.8, 2 * TWO_PI, time_shape="sin", time_frequency=TWO_PI)], 0.3)
    spec = HamiltonianSpec.mechanical(0.7, pot)
    p = SchemeParams(32, 0.125, length=1.0)
    drift = estimate_hbar_drift(p.sample(lambda x: np.cos(TWO_PI * x)), spec, p, max_periods=5000)
    karp = estimate_hbar_matrix(spec, p)
    lo, hi = drift.bounds
    assert lo - 1e-12 <= karp.h_bar <= hi + 1e-12
    if drift.converged:
        assert abs(drift.h_bar - karp.h_bar) < 1e-6
    assert fixed_point_residual(karp.state, karp.h_bar, spec, p) < 1e-10


def test_unconverged_estimate_is_flagged_and_bracketed():
    spec, p, u0 = run1(128)
    est = estimate_hbar_drift(u0, spec, p, max_periods=3)
    assert not est.converged and est.n_steps == 3
    lo, hi = est.bounds
    assert lo <= est.h_bar <= hi
    assert lo <= -2.0 + 1e-12 and -2.0 - 1e-12 <= hi


def test_drift_compensated_orbit_stays_bounded():
    spec, p, u0 = run1(64)
    h = estimate_hbar_matrix(spec, p).h_bar
    trace = evolve(u0, 0.0, 3000, spec, p)
    w = [np.max(np.abs(s.values - k * p.tau * h)) for k, s in zip(trace.snapshot_steps, trace.snapshots)]
    assert max(w) <= max(w[:10]) + 2 * (np.ptp(u0.values) + 1)


# --------------------------------------------------------------------------
# residuals and periodicity


def test_residual_of_fixed_point_and_perturbations():
    spec, p, _ = run1(64)
    karp = estimate_hbar_matrix(spec, p)
    base = fixed_point_residual(karp.state, karp.h_bar, spec, p)
    assert base < 1e-10
    rng = np.random.default_rng(0)
    for delta in (1e-3, 1e-1, 1.0):
        noisy = karp.state.with_values(karp.state.values + rng.uniform(-delta, delta, 64))
        assert fixed_point_residual(noisy, karp.h_bar, spec, p) <= 2 * delta + base


def test_residual_is_zero_for_constant_without_potential():
    assert fixed_point_residual(UNIT.grid(np.ones(32)), 0.0, HamiltonianSpec.mechanical(0.0), UNIT) == 0.0


def test_periodicity_of_immediate_fixed_point():
    trace = evolve(UNIT.grid(np.zeros(32)), 0.0, 5, HamiltonianSpec.mechanical(0.0), UNIT)
    assert detect_eventual_periodicity(trace, 0.0) == (0, 1)


def test_periodicity_after_transient():
    spec, p, u0 = run1(64)
    h = estimate_hbar_matrix(spec, p).h_bar
    trace = evolve(u0, 0.0, 2000, spec, p, snapshot_every=1)
    found = detect_eventual_periodicity(trace, h, 1e-9)
    assert found is not None
    pre, period = found
    assert pre > 0 and period == 1


def test_short_trace_has_no_period():
    spec, p, u0 = run1(64)
    trace = evolve(u0, 0.0, 3, spec, p)
    assert detect_eventual_periodicity(trace, -2.0) is None


def test_period_aware_comparison():
    trace = evolve(UNIT.grid(np.zeros(32)), 0.0, 6, HamiltonianSpec.mechanical(0.0), UNIT)
    assert detect_eventual_periodicity(trace, 0.0, period_steps=3) == (0, 3)
