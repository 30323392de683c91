from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from delaybellman.errors import DimensionError
from delaybellman.sysmodel import (ClosedLoopSystem, ControlLaw, CostWeights, History, SystemModel, ThetaGrid,
                                   close_loop, node_norms, random_history, spectral_norm, sup_norm_G)

EXAMPLE_A = np.array([[-4.93, -1.01, 0, 0], [-3.2, -5.3, -12.8, 0], [6.4, 0.347, -32.5, -1.04], [0, 0.833, 11, -3.96]])
EXAMPLE_B = np.array([[1.92, 0, 0, 0], [0, 1.92, -12.8, 0], [6.4, 0.347, -32.5, -1.04], [0, 0.833, 11, -3.96]])
EXAMPLE_D = np.array([[1, 0], [0, 1], [0, 0], [0, 0]], dtype=float)

finite = st.floats(-5, 5, allow_nan=False)


def test_grid_nodes_and_weights():
    g = ThetaGrid(2.0, 4)
    np.testing.assert_allclose(g.nodes, [-2, -1.5, -1, -0.5, 0])
    assert g.step == 0.5
    np.testing.assert_allclose(g.weights, [0.25, 0.5, 0.5, 0.5, 0.25])
    assert g.weights.sum() == pytest.approx(2.0)


def test_grid_rejects_bad_parameters():
    with pytest.raises(ValueError):
        ThetaGrid(0.0, 4)
    with pytest.raises(ValueError):
        ThetaGrid(1.0, 0)


def test_zero_law_keeps_open_loop():
    sys = SystemModel.build([[1.0, 2.0], [0.0, -1.0]], np.eye(2), [[1.0], [0.0]], 1.0, np.eye(2), 8)
    cl = close_loop(sys, ControlLaw.zero(sys))
    np.testing.assert_array_equal(cl.A0, sys.A)
    np.testing.assert_array_equal(cl.G, sys.E)
    np.testing.assert_array_equal(cl.A1, sys.B)


def test_scalar_closed_loop_arithmetic():
    sys = SystemModel.build([[-1.0]], [[0.0]], [[1.0]], 1.0, "zero", 8)
    cl = close_loop(sys, ControlLaw.build([[-1.0]], "zero", sys))
    assert cl.A0[0, 0] == -2.0


def test_example_system_closed_loop_matches_direct_product(rng):
    sys = SystemModel.build(EXAMPLE_A, EXAMPLE_B, EXAMPLE_D, 1.0, "zero", 8)
    g0 = rng.normal(size=(2, 4))
    cl = close_loop(sys, ControlLaw.build(g0, "zero", sys))
    direct = np.array([[EXAMPLE_A[i, j] + sum(EXAMPLE_D[i, k] * g0[k, j] for k in range(2)) for j in range(4)]
                       for i in range(4)])
    np.testing.assert_allclose(cl.A0, direct, rtol=0, atol=1e-14)


def test_sup_norm_of_G():
    cl = ClosedLoopSystem.from_matrices([[-1.0]], [[0.0]], "zero", 1.0, 8)
    assert sup_norm_G(cl) == 0.0
    diag = ClosedLoopSystem.from_matrices(-np.eye(2), np.zeros((2, 2)), lambda th: np.diag([th, th / 2]), 1.0, 8)
    assert sup_norm_G(diag) == pytest.approx(1.0)


def test_spectral_norm_convention():
    M = np.array([[3.0, 0.0], [4.0, 0.0]])
    assert spectral_norm(M) == pytest.approx(5.0)
    np.testing.assert_allclose(node_norms(np.stack([M, 2 * M])), [5.0, 10.0])


def test_dimension_errors():
    with pytest.raises(DimensionError):
        SystemModel.build(np.eye(2), np.eye(3), np.ones((2, 1)), 1.0)
    sys = SystemModel.build(np.eye(2), np.eye(2), np.ones((2, 1)), 1.0, "zero", 4)
    with pytest.raises(DimensionError):
        close_loop(sys, ControlLaw.build(np.ones((2, 2)), "zero", sys))
    with pytest.raises(DimensionError):
        History(np.zeros((3, 2)), sys.grid)


def test_cost_weights_require_definiteness():
    with pytest.raises(ValueError):
        CostWeights([[1.0]], [[0.0]])
    with pytest.raises(ValueError):
        CostWeights([[-1.0]], [[1.0]])


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4), finite, finite)
def test_close_loop_is_affine_in_the_law(g_a, g_b, alpha, beta):
    sys = SystemModel.build([[0.1, 1.0], [-1.0, 0.3]], [[0.0, 0.2], [0.1, 0.0]], [[1.0], [2.0]], 1.0,
                            lambda th: np.array([[th, 0.0], [0.0, 1.0]]), 4)
    la = ControlLaw.build([g_a[:2]], lambda th: np.array([[g_a[2] * th, g_a[3]]]), sys)
    lb = ControlLaw.build([g_b[:2]], lambda th: np.array([[g_b[2], g_b[3] * th]]), sys)
    mix = ControlLaw(alpha * la.gamma0 + beta * lb.gamma0, alpha * la.gamma1 + beta * lb.gamma1)
    ca, cb, cm = close_loop(sys, la), close_loop(sys, lb), close_loop(sys, mix)
    # remove the constant parts, the rest must combine linearly
    np.testing.assert_allclose(cm.A0 - sys.A, alpha * (ca.A0 - sys.A) + beta * (cb.A0 - sys.A), atol=1e-9)
    np.testing.assert_allclose(cm.G - sys.E, alpha * (ca.G - sys.E) + beta * (cb.G - sys.E), atol=1e-9)
    np.testing.assert_array_equal(cm.A1, sys.B)


@settings(max_examples=40, deadline=None)
@given(finite, finite, st.integers(1, 20), st.floats(0.1, 5))
def test_history_interpolation_exact_for_affine(a, b, n_theta, h):
    grid = ThetaGrid(h, n_theta)
    phi = History.from_function(lambda th: a + b * th, grid)
    np.testing.assert_allclose(phi(grid.nodes)[:, 0], a + b * grid.nodes, atol=1e-12)
    theta = np.linspace(-h, 0, 37)
    np.testing.assert_allclose(phi(theta)[:, 0], a + b * theta, atol=1e-9 * (1 + abs(a) + abs(b) * h))


def test_random_history_has_requested_norm(rng):
    grid = ThetaGrid(1.0, 16)
    phi = random_history(rng, 3, grid, radius=0.7)
    assert phi.norm_h() == pytest.approx(0.7)
    assert phi.samples.shape == (17, 3)
