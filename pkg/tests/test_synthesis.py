from __future__ import annotations

import json
import time

import numpy as np
import pytest

from delaybellman.bellman import BellmanKernels
from delaybellman.errors import UnstableError
from delaybellman.synthesis import (improved_law, policy_iteration, refinement_estimate, riccati_residuals)
from delaybellman.sysmodel import ControlLaw, CostWeights, SystemModel

ARE_GAIN = 1 - np.sqrt(2)


def are_system(n_theta=16):
    return SystemModel.build([[-1.0]], [[0.0]], [[1.0]], 1.0, "zero", n_theta)


@pytest.fixture(scope="module")
def are_run():
    sys = are_system()
    w = CostWeights([[1.0]], [[1.0]])
    start = time.perf_counter()
    res = policy_iteration(sys, w, ControlLaw.zero(sys), tol=1e-6, max_iter=10)
    return sys, w, res, time.perf_counter() - start


def test_improved_law_scalar_arithmetic():
    sys = are_system(4)
    k = BellmanKernels(np.array([[0.5]]), np.zeros((5, 1, 1)), np.zeros((5, 5, 1, 1)), sys.grid)
    law = improved_law(k, sys, CostWeights([[1.0]], [[1.0]]))
    assert law.gamma0[0, 0] == -0.5
    assert np.all(law.gamma1 == 0)


def test_improved_law_without_actuation_is_zero(rng):
    sys = SystemModel.build(-np.eye(2), np.zeros((2, 2)), np.zeros((2, 1)), 1.0, "zero", 4)
    k = BellmanKernels(np.eye(2), rng.normal(size=(5, 2, 2)), rng.normal(size=(5, 5, 2, 2)), sys.grid)
    law = improved_law(k, sys, CostWeights(np.eye(2), [[1.0]]))
    assert np.all(law.gamma0 == 0) and np.all(law.gamma1 == 0)


def test_are_limit(are_run):
    _, _, res, elapsed = are_run
    assert res.converged
    assert res.iterations <= 10
    assert res.law.gamma0[0, 0] == pytest.approx(ARE_GAIN, abs=1e-4)
    assert res.kernels.pi0[0, 0] == pytest.approx(np.sqrt(2) - 1, abs=1e-4)
    assert elapsed < 10


def test_are_fixed_point_residuals(are_run):
    sys, w, res, _ = are_run
    r = riccati_residuals(res.kernels, sys, w)
    assert r.r1 < 1e-4
    assert max(r.r2, r.r3, r.r4, r.r5) < 1e-12
    # the final iterate has the smallest residual of the run
    assert r.r1 <= min(rec.residuals.r1 for rec in res.records) * (1 + 1e-9)


def test_iterates_are_admissible_and_second_order_condition(are_run):
    _, _, res, _ = are_run
    assert all(rec.beta > 0 for rec in res.records)
    assert res.r_min_eig == 1.0


def test_already_converged_law_stops_at_once():
    sys = are_system()
    res = policy_iteration(sys, CostWeights([[1.0]], [[1.0]]), ControlLaw.build([[ARE_GAIN]], "zero", sys), tol=1e-4)
    assert res.converged and res.iterations == 1


def test_non_optimal_law_has_large_first_residual():
    sys = SystemModel.build([[0.0]], [[-0.5]], [[1.0]], 1.0, "zero", 16)
    w = CostWeights([[1.0]], [[1.0]])
    law = ControlLaw.build([[-1.5]], lambda th: [[0.4 * th]], sys)
    base, _, limit = refinement_estimate(sys, w, law)
    assert base.r1 > 100 * limit.r1


def test_unstable_initial_law_is_rejected():
    sys = SystemModel.build([[0.5]], [[0.0]], [[1.0]], 1.0, "zero", 8)
    with pytest.raises(UnstableError, match="decay fit"):
        policy_iteration(sys, CostWeights([[1.0]], [[1.0]]), ControlLaw.zero(sys))


def test_monotone_cost_on_pointwise_delay_plant():
    sys = SystemModel.build([[0.2]], [[-1.0]], [[1.0]], 0.5, "zero", 16)
    w = CostWeights([[1.0]], [[1.0]])
    res = policy_iteration(sys, w, ControlLaw.build([[-1.0]], "zero", sys), dt=0.5 / 64)
    assert res.converged
    trace = res.cost_trace
    scale = max(abs(c) for c in trace)
    assert all(b <= a + 1e-9 * scale for a, b in zip(trace, trace[1:]))


def test_report_round_trip(are_run, tmp_path):
    _, _, res, _ = are_run
    res.to_json(tmp_path / "s.json")
    rep = json.loads((tmp_path / "s.json").read_text())
    assert rep["status"] == "converged"
    assert rep["final_gamma0"][0][0] == pytest.approx(ARE_GAIN, abs=1e-4)
    assert len(rep["history"]) == res.iterations
    res.gamma1_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().splitlines()[0] == "theta,G11"
