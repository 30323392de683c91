"""Control-law improvement, optimality residuals and policy iteration."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bellman import BellmanKernels, bellman_kernels, evaluate_functional, simulate_cost, weight_kernels
from .ddesim import FundamentalMatrix, fundamental_matrix
from .errors import UnstableError
from .sysmodel import ControlLaw, CostWeights, History, SystemModel, ThetaGrid, close_loop, spectral_norm


@dataclass(frozen=True)
class RiccatiResiduals:
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.r1, self.r2, self.r3, self.r4, self.r5)

    def as_dict(self) -> dict:
        return asdict(self)


def improved_law(k: BellmanKernels, sys: SystemModel, w: CostWeights) -> ControlLaw:
    """``Gamma0 = -R^{-1} D^T Pi0`` and ``Gamma1(theta) = -R^{-1} D^T Pi1(theta)``."""
    RinvDT = np.linalg.solve(w.R, sys.D.T)
    return ControlLaw(-RinvDT @ k.pi0, -np.einsum("rn,knm->krm", RinvDT, k.pi1))


def riccati_residuals(k: BellmanKernels, sys: SystemModel, w: CostWeights) -> RiccatiResiduals:
    """Node residuals of the five optimality relations.

    Derivatives are central differences on the theta grid.  The mixed
    derivative ``d/dxi + d/dtheta`` is taken along the diagonal direction,
    which is smooth even where ``Pi2`` has a kink on ``xi = theta``.  The
    source term of relation 3 is used in its symmetric form
    ``E^T(xi) Pi1(theta) + Pi1^T(xi) E(theta)``.
    """
    P0, P1, P2 = k.pi0, k.pi1, k.pi2
    A, B, E, D = sys.A, sys.B, sys.E, sys.D
    S = D @ np.linalg.solve(w.R, D.T)
    step = k.grid.step
    N = k.grid.n_theta

    r1 = spectral_norm(A.T @ P0 + P0 @ A - P0 @ S @ P0 + P1[-1].T + P1[-1] + w.Q)

    r2 = 0.0
    if N >= 2:
        dP1 = (P1[2:] - P1[:-2]) / (2 * step)
        i = np.arange(1, N)
        rhs = (A.T - P0 @ S) @ P1[i] + P2[-1, i] + P0 @ E[i]
        r2 = float(np.linalg.norm(dP1 - rhs, ord=2, axis=(1, 2)).max())

    r3 = 0.0
    if N >= 2:
        a = np.arange(1, N)
        lhs = (P2[2:, 2:] - P2[:-2, :-2]) / (2 * step)  # indexed by (a-1, b-1)
        rhs = (-np.einsum("xji,jk,ykl->xyil", P1[a], S, P1[a])
               + np.einsum("xji,yjl->xyil", E[a], P1[a])
               + np.einsum("xji,yjl->xyil", P1[a], E[a]))
        r3 = float(np.linalg.norm((lhs - rhs).reshape(-1, *P0.shape), ord=2, axis=(1, 2)).max())

    r4 = spectral_norm(P1[0] - P0 @ B)
    r5 = float(np.linalg.norm(P2[0] - B.T @ P1, ord=2, axis=(1, 2)).max())
    return RiccatiResiduals(r1, r2, r3, r4, r5)


def kernel_scale(k: BellmanKernels, w: CostWeights) -> float:
    return spectral_norm(k.pi0) + spectral_norm(w.Q) + 1.0


def resample_law(law: ControlLaw, sys: SystemModel) -> ControlLaw:
    """Interpolate ``Gamma1`` onto the theta grid of ``sys``."""
    src = ThetaGrid(sys.h, len(law.gamma1) - 1)
    return ControlLaw(law.gamma0, src.interp(law.gamma1, sys.grid.nodes))


def refinement_estimate(sys: SystemModel, w: CostWeights, law: ControlLaw, dt: float | None = None,
                        route: str = "lyapunov") -> tuple[RiccatiResiduals, RiccatiResiduals, RiccatiResiduals]:
    """Residuals of a fixed law at the base grids and with ``dt`` and the theta step halved.

    Returns ``(base, refined, limit)`` where ``limit = max(2|base - refined|, 1e-10 scale)``
    estimates the part of each residual attributable to discretization.
    """
    dt = sys.h / 128 if dt is None else dt
    out = []
    for factor in (1, 2):
        s = sys.with_grid(sys.grid.n_theta * factor)
        lw = resample_law(law, s)
        cl = close_loop(s, lw)
        fm = fundamental_matrix(cl, dt=dt / factor)
        k = bellman_kernels(fm, cl, weight_kernels(w, lw), route)
        out.append((riccati_residuals(k, s, w), kernel_scale(k, w)))
    (base, scale), (fine, _) = out
    floor = 1e-10 * scale
    lim = RiccatiResiduals(*(max(2 * abs(a - b), floor) for a, b in zip(base.as_tuple(), fine.as_tuple())))
    return base, fine, lim


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    cost: float  # simulated cost of the probe history
    functional: float  # V(probe) from the kernels
    residuals: RiccatiResiduals
    gamma: float
    beta: float
    law_change: float  # distance to the improved law computed from this iterate
    step: float  # damping factor used to reach this iterate
    gamma0: list

    def as_dict(self) -> dict:
        d = asdict(self)
        d["residuals"] = self.residuals.as_dict()
        return d


@dataclass
class SynthesisResult:
    law: ControlLaw
    kernels: BellmanKernels
    status: str  # "converged" | "max_iter" | "destabilized"
    records: list[IterationRecord] = field(default_factory=list)
    r_min_eig: float = float("nan")
    fm: FundamentalMatrix | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def cost_trace(self) -> list[float]:
        return [r.cost for r in self.records]

    def report(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "second_order_min_eig_R": self.r_min_eig,
            "final_gamma0": self.law.gamma0.tolist(),
            "pi0": self.kernels.pi0.tolist(),
            "history": [r.as_dict() for r in self.records],
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.report(), indent=2))

    def gamma1_csv(self, path) -> None:
        g1 = self.law.gamma1
        r, n = g1.shape[1:]
        nodes = self.kernels.grid.nodes
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["theta"] + [f"G{i + 1}{j + 1}" for i in range(r) for j in range(n)])
            for th, G in zip(nodes, g1):
                wr.writerow([repr(float(th))] + [repr(float(v)) for v in G.ravel()])


def _blend(old: ControlLaw, new: ControlLaw, step: float) -> ControlLaw:
    return ControlLaw(old.gamma0 + step * (new.gamma0 - old.gamma0),
                      old.gamma1 + step * (new.gamma1 - old.gamma1))


def policy_iteration(sys: SystemModel, w: CostWeights, init: ControlLaw, tol: float = 1e-5, max_iter: int = 30,
                     dt: float | None = None, probe: History | None = None, route: str = "lyapunov",
                     max_halvings: int = 5, callback=None) -> SynthesisResult:
    """Alternate kernel evaluation and law improvement until the law stops changing.

    Each iterate must pass the decay-fit stability check; an improved law
    that fails it is damped by halving the update up to ``max_halvings``
    times.  The returned law is the last evaluated iterate, with its kernels.
    """
    r_min = float(np.linalg.eigvalsh(w.R).min())
    if r_min <= 0:
        raise ValueError("R must be positive definite")
    probe = History.constant(np.ones(sys.n), sys.grid) if probe is None else probe
    cl = close_loop(sys, init)
    fm = fundamental_matrix(cl, dt=dt)
    if not fm.fit.stable:
        raise UnstableError(f"initial law is not stabilizing (decay fit: {fm.fit.status}, beta={fm.beta:.4g})")
    law, step = init, 1.0
    records: list[IterationRecord] = []
    status = "max_iter"
    kernels = None
    for it in range(max_iter):
        kernels = bellman_kernels(fm, cl, weight_kernels(w, law), route)
        res = riccati_residuals(kernels, sys, w)
        cost = simulate_cost(cl, law, w, probe, dt=fm.dt)
        new = improved_law(kernels, sys, w)
        change = new.distance(law)
        rec = IterationRecord(it, cost, evaluate_functional(kernels, probe), res, fm.gamma, fm.beta, change,
                              step, law.gamma0.tolist())
        records.append(rec)
        if callback is not None:
            callback(rec)
        if change < tol:
            status = "converged"
            break
        step = 1.0
        for _ in range(max_halvings + 1):
            cand = _blend(law, new, step)
            cl_c = close_loop(sys, cand)
            fm_c = fundamental_matrix(cl_c, dt=dt)
            if fm_c.fit.stable:
                break
            step *= 0.5
        else:
            status = "destabilized"
            break
        law, cl, fm = cand, cl_c, fm_c
    return SynthesisResult(law, kernels, status, records, r_min, fm)
