from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaybellman.bellman import BellmanKernels, bellman_kernels, evaluate_functional, weight_kernels
from delaybellman.bounds import (cubic_lower_bound, growth_bound, lower_bound_pipeline, trajectory_floor,
                                 upper_bound, upper_terms, velocity_bound_check)
from delaybellman.ddesim import fundamental_matrix, integrate_closed_loop
from delaybellman.sysmodel import ClosedLoopSystem, CostWeights, History, ThetaGrid, close_loop, random_history

from conftest import TEST_SYSTEMS, distributed_law, distributed_system

# supplied intermediates of the four-state example and the reference values that follow from them
EXAMPLE_OVERRIDES = {"phi0_norm": 0.1, "norm_A1": 1.92, "g": 3.0393, "L": 41.9333, "C2": 40.3438}
EXAMPLE_TARGETS = {"N_t_star": 9.6961e17, "N_bar": 1.6403e21, "delta": 3.0482e-23, "cubic_coefficient": 7.6206e-23}


def example_report():
    cl = ClosedLoopSystem.from_matrices(np.zeros((4, 4)), np.zeros((4, 4)), "zero", 1.0, 8)
    phi = History.constant([0.1, 0, 0, 0], cl.grid)
    return lower_bound_pipeline(cl, 0.1, 1.0, np.diag([1.0, 10, 1, 100]), phi, overrides=EXAMPLE_OVERRIDES)


@pytest.mark.parametrize("key", list(EXAMPLE_TARGETS))
def test_example_arithmetic(key):
    assert getattr(example_report(), key) == pytest.approx(EXAMPLE_TARGETS[key], rel=1e-3)


def test_example_auxiliary_constants():
    rep = example_report()
    assert rep.m0 == pytest.approx(0.5959, abs=1e-4)
    assert rep.delta < rep.t_star
    assert rep.lambda_min_Q == 1.0
    assert not rep.warnings


def test_delay_free_reduction():
    cl = ClosedLoopSystem.from_matrices([[-1.0]], [[0.0]], "zero", 1.0, 8)
    rep = lower_bound_pipeline(cl, 1.0, 1.0, [[1.0]], History.constant([0.5], cl.grid))
    assert rep.g == 0 and rep.norm_A1 == 0 and rep.int_G == 0
    assert rep.L == 1.0 and rep.C2 == 1.0
    assert rep.m0 == 0.5
    assert rep.N_t_star == pytest.approx(np.e)
    assert rep.N_bar == pytest.approx(np.e)
    assert rep.delta == pytest.approx(0.25 / np.e)


def test_delta_beyond_horizon_is_warned():
    cl = ClosedLoopSystem.from_matrices([[-1.0]], [[0.0]], "zero", 1.0, 8)
    rep = lower_bound_pipeline(cl, 1e-6, 1e-6, [[1.0]], History.constant([1.0], cl.grid))
    assert rep.delta > rep.t_star
    assert any("exceeds t*" in w for w in rep.warnings)


def test_swapped_constants_are_flagged():
    cl = ClosedLoopSystem.from_matrices([[-1.0]], [[0.0]], "zero", 1.0, 8)
    rep = lower_bound_pipeline(cl, 1.0, 1.0, [[1.0]], overrides={"L": 1.0, "C2": 2.0})
    assert any("smaller than C2" in w for w in rep.warnings)


def test_upper_bound_without_delay_kernels():
    grid = ThetaGrid(1.0, 4)
    P0 = np.array([[2.0, 1.0], [1.0, 3.0]])
    k = BellmanKernels(P0, np.zeros((5, 2, 2)), np.zeros((5, 5, 2, 2)), grid)
    assert upper_bound(k) == pytest.approx(np.linalg.norm(P0, 2))
    assert upper_terms(k)[1:] == (0.0, 0.0)


def test_growth_bound_formula():
    assert growth_bound(0.1, 1.92, 3.0393, 1.0, 41.9333, 0.0) == pytest.approx(0.5959, abs=1e-4)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 10), st.floats(0, 10), st.floats(0, 10))
def test_cubic_bound_monotone_from_zero(coef, s1, s2):
    assert cubic_lower_bound(coef, 0.0) == 0.0
    lo, hi = sorted((s1, s2))
    assert cubic_lower_bound(coef, lo) <= cubic_lower_bound(coef, hi)


def test_sandwich_on_distributed_system(rng):
    sys = distributed_system(16)
    law = distributed_law(sys)
    w = CostWeights(np.eye(2), [[1.0]])
    cl = close_loop(sys, law)
    k = bellman_kernels(fundamental_matrix(cl), cl, weight_kernels(w, law))
    alpha = 1.0
    rep = lower_bound_pipeline(cl, alpha, 1.0, w.Q, kernels=k)
    assert rep.cubic_coefficient > 0
    for _ in range(20):
        phi = random_history(rng, 2, sys.grid, radius=rng.uniform(0.05, alpha))
        v = evaluate_functional(k, phi)
        assert cubic_lower_bound(rep.cubic_coefficient, np.linalg.norm(phi.at_zero)) <= v
        assert v <= rep.C1 * phi.norm_h() ** 2


def test_velocity_bound_exponential():
    cl = ClosedLoopSystem.from_matrices([[-1.0]], [[0.0]], "zero", 1.0, 8)
    tr = integrate_closed_loop(cl, History.constant([1.0], cl.grid), T=5.0)
    chk = velocity_bound_check(cl, [tr])
    assert chk.C2 == 1.0
    assert chk.max_ratio == pytest.approx(1.0, abs=1e-2)
    assert chk.holds


def test_velocity_bound_pure_delay(rng):
    cl = ClosedLoopSystem.from_matrices([[0.0]], [[-1.0]], "zero", 1.0, 16)
    trs = [integrate_closed_loop(cl, random_history(rng, 1, cl.grid), T=5.0) for _ in range(5)]
    chk = velocity_bound_check(cl, trs)
    assert chk.C2 == 1.0
    assert chk.max_ratio <= 1.05


@pytest.mark.parametrize("name", list(TEST_SYSTEMS))
def test_trajectory_floor(name, rng):
    cl = TEST_SYSTEMS[name](16)
    for _ in range(5):
        phi = random_history(rng, cl.n, cl.grid)
        rep = lower_bound_pipeline(cl, 1.0, 1.0, np.eye(cl.n), phi)
        tr = integrate_closed_loop(cl, phi, T=cl.h)
        assert trajectory_floor(tr, rep.delta) >= 0.5
