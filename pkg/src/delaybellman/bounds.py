"""Quadratic upper bound and local cubic lower bound of the Bellman functional.

All matrix norms are spectral norms; integrals of node norms use the
trapezoid rule on the theta grid.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bellman import BellmanKernels
from .ddesim import Trajectory
from .sysmodel import Array, ClosedLoopSystem, History, node_norms, spectral_norm, sup_norm_G

NORM = "spectral (largest singular value)"


def upper_terms(k: BellmanKernels) -> tuple[float, float, float]:
    """``(||Pi0||, X1, X2)`` with ``X1 = int ||Pi1||`` and ``X2 = int int ||Pi2||``."""
    w = k.grid.weights
    X1 = float(w @ node_norms(k.pi1))
    X2 = float(w @ node_norms(k.pi2) @ w)
    return spectral_norm(k.pi0), X1, X2


def upper_bound(k: BellmanKernels) -> float:
    """``C1 = ||Pi0|| + 2 X1 + X2`` so that ``V(phi) <= C1 ||phi||_h^2``."""
    p0, X1, X2 = upper_terms(k)
    return p0 + 2 * X1 + X2


def growth_bound(alpha: float, norm_A1: float, g: float, h: float, L: float, t) -> Array | float:
    """``N(t) = alpha (1 + ||A1|| h + g h^2) e^{L t}``."""
    return alpha * (1 + norm_A1 * h + g * h * h) * np.exp(L * np.asarray(t, dtype=float))


def cubic_lower_bound(coefficient: float, x0_norm) -> Array | float:
    """``u_alpha(s) = coefficient * s^3``."""
    return coefficient * np.asarray(x0_norm, dtype=float) ** 3


@dataclass(frozen=True)
class BoundsReport:
    alpha: float
    t_star: float
    h: float
    phi0_norm: float
    norm_A0: float
    norm_A1: float
    g: float
    int_G: float
    L: float
    C2: float
    m0: float
    N_t_star: float
    N_bar: float
    delta: float
    lambda_min_Q: float
    cubic_coefficient: float
    C1: float | None = None
    pi0_norm: float | None = None
    X1: float | None = None
    X2: float | None = None
    norm: str = NORM
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["warnings"] = list(self.warnings)
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2))

    def table(self) -> str:
        rows = [(k, v) for k, v in self.as_dict().items() if k not in ("warnings", "norm")]
        width = max(len(k) for k, _ in rows)
        lines = [f"{k:<{width}}  {'-' if v is None else format(v, '.6g')}" for k, v in rows]
        lines.append(f"{'norm':<{width}}  {self.norm}")
        lines += [f"warning: {w}" for w in self.warnings]
        return "\n".join(lines)


def lower_bound_pipeline(cl: ClosedLoopSystem, alpha: float, t_star: float, Q, phi: History | None = None,
                         kernels: BellmanKernels | None = None, overrides: dict | None = None) -> BoundsReport:
    """Evaluate every constant of the cubic lower bound in order.

    ``overrides`` may replace the computed ``norm_A0``, ``norm_A1``, ``g``,
    ``int_G``, ``L``, ``C2``, ``phi0_norm`` or ``int_phi`` (integral of
    ``||phi||``), which is how externally supplied intermediate values are
    fed through the same arithmetic.  Without ``phi`` the worst case
    ``||phi(0)|| = alpha`` and ``int ||phi|| = alpha h`` is used.
    """
    if not alpha > 0 or not t_star > 0:
        raise ValueError("alpha and t_star must be positive")
    ov = dict(overrides or {})
    h = cl.h
    norm_A0 = ov.get("norm_A0", spectral_norm(cl.A0))
    norm_A1 = ov.get("norm_A1", spectral_norm(cl.A1))
    g = ov.get("g", sup_norm_G(cl))
    int_G = ov.get("int_G", float(cl.grid.weights @ node_norms(cl.G)))
    if phi is not None:
        phi0 = float(np.linalg.norm(phi.at_zero))
        int_phi = float(phi.grid.weights @ np.linalg.norm(phi.samples, axis=1))
    else:
        phi0, int_phi = alpha, alpha * h
    phi0 = ov.get("phi0_norm", phi0)
    int_phi = ov.get("int_phi", int_phi)
    L = ov.get("L", norm_A0 + norm_A1 + g * h)
    C2 = ov.get("C2", norm_A0 + norm_A1 + int_G)
    m0 = phi0 + (norm_A1 + g * h) * int_phi
    N_t = float(growth_bound(alpha, norm_A1, g, h, L, t_star))
    N_bar = max(C2 * L * N_t, alpha / (2 * t_star))
    delta = phi0 / (2 * N_bar)
    lam = float(np.linalg.eigvalsh(np.atleast_2d(Q)).min())
    coef = lam / (8 * N_bar)

    warnings = []
    if delta > t_star:
        warnings.append(f"delta={delta:.4g} exceeds t*={t_star:.4g}; the lower bound is not valid for this alpha, t*")
    if not N_t > alpha:
        warnings.append("N(t*) does not exceed alpha")
    if m0 > alpha * (1 + (norm_A1 + g * h) * h) * (1 + 1e-12):
        warnings.append("m0 exceeds alpha (1 + (||A1|| + g h) h); the history is outside the alpha-ball")
    if L < C2:
        warnings.append(f"L={L:.6g} is smaller than C2={C2:.6g}, although g h >= int ||G|| by definition")

    C1 = p0 = X1 = X2 = None
    if kernels is not None:
        p0, X1, X2 = upper_terms(kernels)
        C1 = p0 + 2 * X1 + X2
    return BoundsReport(alpha, t_star, h, phi0, norm_A0, norm_A1, g, int_G, L, C2, m0, N_t, N_bar, delta, lam,
                        coef, C1, p0, X1, X2, NORM, tuple(warnings))


@dataclass(frozen=True)
class VelocityCheck:
    max_ratio: float
    C2: float
    tol: float

    @property
    def holds(self) -> bool:
        return self.max_ratio <= self.C2 * (1 + self.tol)


def velocity_bound_check(cl: ClosedLoopSystem, trajectories: list[Trajectory], tol: float = 5e-2) -> VelocityCheck:
    """``max ||x'(t)|| / ||x_t||_h`` over interior steps against ``C2``."""
    C2 = spectral_norm(cl.A0) + spectral_norm(cl.A1) + float(cl.grid.weights @ node_norms(cl.G))
    worst = 0.0
    for tr in trajectories:
        m = len(tr.past) - 1
        full = np.concatenate([tr.past[:-1], tr.states])
        seg = np.lib.stride_tricks.sliding_window_view(np.linalg.norm(full, axis=1), m + 1).max(axis=1)
        xdot = (tr.states[2:] - tr.states[:-2]) / (2 * tr.dt)
        den = seg[1:-1]
        ok = den > 0
        if np.any(ok):
            worst = max(worst, float((np.linalg.norm(xdot, axis=1)[ok] / den[ok]).max()))
    return VelocityCheck(worst, C2, tol)


def trajectory_floor(tr: Trajectory, delta: float) -> float:
    """``min ||x(t)|| / ||phi(0)||`` over ``t`` in ``[0, delta]`` (at least the first step)."""
    n_steps = max(1, int(np.floor(delta / tr.dt)))
    x0 = np.linalg.norm(tr.states[0])
    if x0 == 0:
        return float("inf")
    return float(np.linalg.norm(tr.states[:n_steps + 1], axis=1).min() / x0)
