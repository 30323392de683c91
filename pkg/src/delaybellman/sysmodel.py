"""System model, cost weights, control laws and histories.

Every matrix-valued function of the lag ``theta`` in ``[-h, 0]`` is stored as
samples on one uniform grid with ``n_theta`` intervals; off-node values are
linear interpolants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DimensionError

Array = NDArray[np.float64]

DEFAULT_N_THETA = 64


def spectral_norm(M: Array) -> float:
    """Largest singular value (operator 2-norm); Euclidean norm for vectors."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        return float(np.linalg.norm(M))
    return float(np.linalg.norm(M, 2))


def node_norms(samples: Array) -> Array:
    """Spectral norm of each matrix in a stack of shape (..., p, q)."""
    samples = np.asarray(samples, dtype=float)
    lead = samples.shape[:-2]
    flat = samples.reshape((-1,) + samples.shape[-2:])
    out = np.linalg.norm(flat, ord=2, axis=(1, 2))
    return out.reshape(lead)


@dataclass(frozen=True)
class ThetaGrid:
    """Uniform grid ``theta_i = -h + i*h/n_theta`` on ``[-h, 0]``."""

    h: float
    n_theta: int = DEFAULT_N_THETA

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"delay must be positive, got h={self.h}")
        if self.n_theta < 1:
            raise ValueError("n_theta must be >= 1")

    @property
    def step(self) -> float:
        return self.h / self.n_theta

    @property
    def nodes(self) -> Array:
        return -self.h + self.step * np.arange(self.n_theta + 1)

    @property
    def weights(self) -> Array:
        """Composite trapezoid weights over the full grid."""
        w = np.full(self.n_theta + 1, self.step)
        w[0] = w[-1] = 0.5 * self.step
        return w

    def __len__(self) -> int:
        return self.n_theta + 1

    def interp(self, samples: Array, theta) -> Array:
        """Linear interpolation of node samples (first axis) at ``theta``.

        Values outside ``[-h, 0]`` are zero.
        """
        samples = np.asarray(samples, dtype=float)
        theta = np.asarray(theta, dtype=float)
        scalar = theta.ndim == 0
        theta = np.atleast_1d(theta)
        u = (theta + self.h) / self.step
        inside = (u >= -1e-12) & (u <= self.n_theta + 1e-12)
        u = np.clip(u, 0.0, self.n_theta)
        i0 = np.minimum(np.floor(u).astype(int), self.n_theta - 1)
        frac = (u - i0).reshape((-1,) + (1,) * (samples.ndim - 1))
        out = (1.0 - frac) * samples[i0] + frac * samples[i0 + 1]
        out[~inside] = 0.0
        return out[0] if scalar else out


def trapz_weights(n_intervals: int, step: float) -> Array:
    w = np.full(n_intervals + 1, float(step))
    w[0] = w[-1] = 0.5 * step
    if n_intervals == 0:
        w[:] = 0.0
    return w


def _as_matrix(M, name: str) -> Array:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True)
class SystemModel:
    """``x' = A x(t) + B x(t-h) + int E(theta) x(t+theta) dtheta + D u(t)``."""

    A: Array
    B: Array
    D: Array
    h: float
    E: Array  # (n_theta + 1, n, n) samples on the theta grid
    grid: ThetaGrid = field(repr=False)

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        D = _as_matrix(self.D, "D")
        E = np.asarray(self.E, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape != (n, n):
            raise DimensionError(f"A and B must be {n}x{n}, got {A.shape}, {B.shape}")
        if D.shape[0] != n:
            raise DimensionError(f"D must have {n} rows, got {D.shape}")
        if D.shape[1] > n:
            raise DimensionError("input dimension r must not exceed n")
        if E.shape != (len(self.grid), n, n):
            raise DimensionError(
                f"E samples must have shape {(len(self.grid), n, n)}, got {E.shape}"
            )
        if not np.all(np.isfinite(E)):
            raise ValueError("E has non-finite samples")
        if not np.isclose(self.grid.h, self.h):
            raise DimensionError("grid delay does not match system delay")
        for name, val in (("A", A), ("B", B), ("D", D), ("E", E)):
            object.__setattr__(self, name, val)

    @classmethod
    def build(cls, A, B, D, h, E="zero", n_theta: int = DEFAULT_N_THETA) -> "SystemModel":
        """Construct with ``E`` given as samples, a constant matrix, a callable or ``"zero"``."""
        A = _as_matrix(A, "A")
        n = A.shape[0]
        grid = ThetaGrid(float(h), n_theta)
        return cls(A, B, D, float(h), matrix_function(E, grid, (n, n)), grid)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def r(self) -> int:
        return self.D.shape[1]

    def with_grid(self, n_theta: int) -> "SystemModel":
        """Resample ``E`` onto a grid with ``n_theta`` intervals."""
        grid = ThetaGrid(self.h, n_theta)
        return SystemModel(self.A, self.B, self.D, self.h, self.grid.interp(self.E, grid.nodes), grid)


def matrix_function(source, grid: ThetaGrid, shape: tuple[int, int]) -> Array:
    """Sample a matrix function of theta onto ``grid``.

    ``source`` is ``"zero"``, a constant matrix, a callable ``theta -> matrix``,
    or an array of samples already on the grid.
    """
    if isinstance(source, str):
        if source != "zero":
            raise ValueError(f"unknown matrix function kind {source!r}")
        return np.zeros((len(grid),) + shape)
    if callable(source):
        out = np.array([np.atleast_2d(source(th)) for th in grid.nodes], dtype=float)
    else:
        arr = np.asarray(source, dtype=float)
        if arr.ndim <= 2:
            arr = np.atleast_2d(arr)
            out = np.broadcast_to(arr, (len(grid),) + arr.shape).copy()
        else:
            out = arr
    if out.shape != (len(grid),) + shape:
        raise DimensionError(f"expected samples of shape {(len(grid),) + shape}, got {out.shape}")
    return out


@dataclass(frozen=True)
class CostWeights:
    Q: Array
    R: Array

    def __post_init__(self):
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1]:
                raise DimensionError(f"{name} must be square")
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class ControlLaw:
    """``u(t) = Gamma0 x(t) + int Gamma1(theta) x(t+theta) dtheta``."""

    gamma0: Array
    gamma1: Array  # (n_theta + 1, r, n)

    def __post_init__(self):
        g0 = _as_matrix(self.gamma0, "Gamma0")
        g1 = np.asarray(self.gamma1, dtype=float)
        if g1.ndim != 3 or g1.shape[1:] != g0.shape:
            raise DimensionError(f"Gamma1 samples must be (N, {g0.shape[0]}, {g0.shape[1]}), got {g1.shape}")
        object.__setattr__(self, "gamma0", g0)
        object.__setattr__(self, "gamma1", g1)

    @classmethod
    def zero(cls, sys: SystemModel) -> "ControlLaw":
        return cls(np.zeros((sys.r, sys.n)), np.zeros((len(sys.grid), sys.r, sys.n)))

    @classmethod
    def build(cls, gamma0, gamma1, sys: SystemModel) -> "ControlLaw":
        g0 = _as_matrix(gamma0, "Gamma0")
        return cls(g0, matrix_function(gamma1, sys.grid, g0.shape))

    def distance(self, other: "ControlLaw") -> float:
        """``max(||dGamma0||, max_theta ||dGamma1(theta)||)``."""
        d0 = spectral_norm(self.gamma0 - other.gamma0)
        d1 = float(node_norms(self.gamma1 - other.gamma1).max())
        return max(d0, d1)


@dataclass(frozen=True)
class ClosedLoopSystem:
    """``x' = A0 x(t) + A1 x(t-h) + int G(theta) x(t+theta) dtheta``.

    Build with :func:`close_loop`.
    """

    A0: Array
    A1: Array
    G: Array
    grid: ThetaGrid = field(repr=False)

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def has_distributed(self) -> bool:
        return bool(np.any(self.G != 0.0))

    @classmethod
    def from_matrices(cls, A0, A1, G, h: float, n_theta: int = DEFAULT_N_THETA) -> "ClosedLoopSystem":
        """Closed loop given directly (equivalent to an open loop with zero law)."""
        A0 = _as_matrix(A0, "A0")
        n = A0.shape[0]
        sys = SystemModel.build(A0, A1, np.zeros((n, 1)), h, G, n_theta)
        return close_loop(sys, ControlLaw.zero(sys))


def close_loop(sys: SystemModel, law: ControlLaw) -> ClosedLoopSystem:
    if law.gamma0.shape != (sys.r, sys.n):
        raise DimensionError(f"Gamma0 must be {sys.r}x{sys.n}, got {law.gamma0.shape}")
    if law.gamma1.shape != (len(sys.grid), sys.r, sys.n):
        raise DimensionError("Gamma1 samples do not match the system theta grid")
    A0 = sys.A + sys.D @ law.gamma0
    G = sys.E + np.einsum("ij,kjl->kil", sys.D, law.gamma1)
    return ClosedLoopSystem(A0, sys.B.copy(), G, sys.grid)


def sup_norm_G(cl: ClosedLoopSystem) -> float:
    """``g = max_i ||G(theta_i)||`` over the grid nodes."""
    return float(node_norms(cl.G).max())


@dataclass(frozen=True)
class History:
    """Initial function on ``[-h, 0]`` sampled on the theta grid."""

    samples: Array  # (n_theta + 1, n)
    grid: ThetaGrid = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] != len(self.grid):
            raise DimensionError(f"history needs {len(self.grid)} samples, got {s.shape[0]}")
        object.__setattr__(self, "samples", s)

    @classmethod
    def from_function(cls, f, grid: ThetaGrid) -> "History":
        return cls(np.array([np.atleast_1d(f(th)) for th in grid.nodes], dtype=float), grid)

    @classmethod
    def constant(cls, value, grid: ThetaGrid) -> "History":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(np.tile(v, (len(grid), 1)), grid)

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def at_zero(self) -> Array:
        return self.samples[-1]

    def __call__(self, theta) -> Array:
        return self.grid.interp(self.samples, theta)

    def norm_h(self) -> float:
        return float(np.linalg.norm(self.samples, axis=1).max())

    def scaled(self, c: float) -> "History":
        return History(c * self.samples, self.grid)

    def resampled(self, grid: ThetaGrid) -> "History":
        return History(self.grid.interp(self.samples, grid.nodes), grid)


def random_history(rng: np.random.Generator, n: int, grid: ThetaGrid, radius: float = 1.0,
                   n_modes: int = 3) -> History:
    """Smooth random history (low-order Fourier modes) with ``||phi||_h = radius``."""
    th = grid.nodes / grid.h
    coef = rng.normal(size=(2 * n_modes + 1, n))
    basis = [np.ones_like(th)]
    for k in range(1, n_modes + 1):
        basis += [np.cos(k * np.pi * th), np.sin(k * np.pi * th)]
    samples = np.stack(basis, axis=1) @ coef
    hist = History(samples, grid)
    return hist.scaled(radius / hist.norm_h())
