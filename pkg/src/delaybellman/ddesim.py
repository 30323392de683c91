"""Fixed-step simulation of the closed loop, fundamental matrix and Cauchy formula.

The integrator is explicit RK4 on a grid whose step divides the delay, so
every delayed argument ``t - h`` falls on a stored node at the start and end
of a step and halfway between two nodes at the midpoint stages.  The stored
past is interpolated linearly.  A jump of the state at ``t = 0`` (the
fundamental matrix jumps from 0 to I there) is tracked explicitly so that
every interval of the piecewise-linear past uses the correct one-sided value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, GridError
from .sysmodel import Array, ClosedLoopSystem, History, node_norms, trapz_weights

DEFAULT_STEPS_PER_DELAY = 128
BLOCK_DELAYS = 5
MAX_DELAYS = 200
DECAY_TOL = 1e-6


def steps_per_delay(h: float, dt: float) -> int:
    m = int(round(h / dt))
    if m < 1 or abs(m * dt - h) > 1e-9 * h:
        raise GridError(f"dt={dt} does not divide the delay h={h}")
    return m


class DelayIntegrator:
    """RK4 for ``z' = A0 z(t) + A1 z(t-h) + int G(theta) z(t+theta) dtheta + f``.

    ``z`` has shape ``(n, k)``.  ``past`` holds ``z`` on ``t = -h, -h+dt, ..., 0``
    where the last entry is the left limit ``z(0-)``; ``z0`` is ``z(0+)``.
    """

    def __init__(self, A0, A1, G, grid, dt, past, z0, capacity):
        self.A0, self.A1 = np.asarray(A0, float), np.asarray(A1, float)
        self.h = grid.h
        self.dt = float(dt)
        m = self.m = steps_per_delay(self.h, self.dt)
        past = np.asarray(past, float)
        z0 = np.asarray(z0, float)
        self.X = np.empty((m + capacity + 1,) + z0.shape)
        self.X[:m] = past[:m]
        self.X[m] = z0
        self.jump0 = past[m] - z0
        self.j = 0
        self.capacity = capacity

        self.distributed = bool(np.any(G != 0.0))
        if self.distributed:
            th_full = -self.h + self.dt * np.arange(m + 1)
            self.G_full = grid.interp(G, th_full)
            self.GW_full = trapz_weights(m, self.dt)[:, None, None] * self.G_full
            self.wR_full = np.full(m + 1, 0.5 * self.dt)
            self.wR_full[0] = 0.0

            th_half = np.concatenate([[-self.h], -self.h + self.dt * (0.5 + np.arange(m)), [0.0]])
            lengths = np.diff(th_half)
            w_half = np.zeros(m + 2)
            w_half[:-1] += 0.5 * lengths
            w_half[1:] += 0.5 * lengths
            self.wR_half = np.concatenate([[0.0], 0.5 * lengths])
            self.G_half = grid.interp(G, th_half)
            self.GW_half = w_half[:, None, None] * self.G_half
            n = self.A0.shape[0]
            # (n, (m+1) n) blocks so that a window of stored states is one matmul
            self.Wf = self.GW_full.transpose(1, 0, 2).reshape(n, -1)
            self.Wh_body = self.GW_half[1:m + 1].transpose(1, 0, 2).reshape(n, -1)
        self._half_cache = (-1, None)

    @property
    def t(self) -> float:
        return self.j * self.dt

    def _delayed(self, j, c):
        m, X = self.m, self.X
        if c == 0:
            return X[j]
        right = X[j + 1] + (self.jump0 if j + 1 == m else 0.0)
        if c == 1:
            return right
        return 0.5 * (X[j] + right)

    def _integral(self, j, c, Y, delayed):
        m, X = self.m, self.X
        k = Y.shape[-1]
        if c == 0:
            val = self.Wf @ X[j:j + m + 1].reshape(-1, k)
            p = m - j
            if 0 < p <= m:
                val = val + self.wR_full[p] * (self.G_full[p] @ self.jump0)
        elif c == 1:
            val = self.Wf[:, :-Y.shape[0]] @ X[j + 1:j + m + 1].reshape(-1, k) + self.GW_full[m] @ Y
            p = m - (j + 1)
            if 0 < p < m:
                val = val + self.wR_full[p] * (self.G_full[p] @ self.jump0)
        else:
            if self._half_cache[0] != j:
                body = self.Wh_body @ X[j + 1:j + m + 1].reshape(-1, k)
                p = m - j
                if 1 <= p <= m:
                    body = body + self.wR_half[p] * (self.G_half[p] @ self.jump0)
                self._half_cache = (j, body)
            val = self._half_cache[1] + self.GW_half[0] @ delayed + self.GW_half[m + 1] @ Y
        return val

    def _rhs(self, j, c, Y, forcing):
        d = self._delayed(j, c)
        out = self.A0 @ Y + self.A1 @ d
        if self.distributed:
            out = out + self._integral(j, c, Y, d)
        if forcing is not None:
            out = out + forcing
        return out

    def step(self, forcing=None):
        if self.j >= self.capacity:
            raise RuntimeError("integrator capacity exhausted")
        j, dt, m = self.j, self.dt, self.m
        x = self.X[j + m]
        k1 = self._rhs(j, 0, x, forcing)
        k2 = self._rhs(j, 0.5, x + 0.5 * dt * k1, forcing)
        k3 = self._rhs(j, 0.5, x + 0.5 * dt * k2, forcing)
        k4 = self._rhs(j, 1, x + dt * k3, forcing)
        nxt = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"non-finite state at t={(j + 1) * dt:g}", time=(j + 1) * dt)
        self.X[j + m + 1] = nxt
        self.j += 1
        return nxt

    def run(self, n_steps, forcing=None):
        for _ in range(n_steps):
            self.step(forcing)

    @property
    def solution(self) -> Array:
        """States at ``t = 0, dt, ..., j*dt``."""
        return self.X[self.m:self.m + self.j + 1]

    @property
    def past(self) -> Array:
        return self.X[:self.m + 1]


@dataclass(frozen=True)
class Trajectory:
    """Closed-loop solution on ``t_j = j*dt``; ``past`` covers ``[-h, 0]`` on the same step."""

    dt: float
    h: float
    states: Array  # (N+1, n)
    past: Array  # (m+1, n) on t = -h .. 0

    @property
    def times(self) -> Array:
        return self.dt * np.arange(len(self.states))

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.states) - 1)

    def at(self, t) -> Array:
        """``x(t)`` for ``t`` in ``[-h, T]`` by linear interpolation."""
        m = len(self.past) - 1
        full = np.concatenate([self.past[:-1], self.states])
        t = np.asarray(t, dtype=float)
        u = (t + self.h) / self.dt
        if np.any(u < -1e-9) or np.any(u > len(full) - 1 + 1e-9):
            raise ValueError("time outside stored trajectory")
        u = np.clip(u, 0, len(full) - 1)
        i0 = np.minimum(np.floor(u).astype(int), len(full) - 2)
        frac = (u - i0)[..., None]
        return (1 - frac) * full[i0] + frac * full[i0 + 1]

    def segment_norm(self, j: int) -> float:
        """``||x_t||_h`` at ``t = t_j`` from the stored nodes."""
        m = len(self.past) - 1
        full = np.concatenate([self.past[:-1], self.states])
        return float(np.linalg.norm(full[j:j + m + 1], axis=1).max())

    def to_csv(self, path) -> None:
        path = Path(path)
        n = self.states.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)])
            for t, x in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def _history_on_steps(phi: History, h: float, dt: float, m: int) -> Array:
    return phi(-h + dt * np.arange(m + 1))


def integrate_closed_loop(cl: ClosedLoopSystem, phi: History, T: float | None = None, dt: float | None = None,
                          rel_tol: float = 1e-7) -> Trajectory:
    """Solution from ``phi`` on ``[0, T]``.

    With ``T=None`` the horizon grows in blocks of five delays until the
    state over the last block is below ``rel_tol`` times its peak (capped at
    200 delays).
    """
    dt = cl.h / DEFAULT_STEPS_PER_DELAY if dt is None else dt
    m = steps_per_delay(cl.h, dt)
    if T is not None and T < cl.h - 1e-12:
        raise ValueError("horizon must be at least one delay")
    if phi.n != cl.n:
        raise ValueError("history dimension does not match the system")
    past = _history_on_steps(phi, cl.h, dt, m)[:, :, None]
    if T is not None:
        n_steps = int(round(T / dt))
        integ = DelayIntegrator(cl.A0, cl.A1, cl.G, cl.grid, dt, past, past[-1], n_steps)
        integ.run(n_steps)
    else:
        block, cap = BLOCK_DELAYS * m, MAX_DELAYS * m
        integ = DelayIntegrator(cl.A0, cl.A1, cl.G, cl.grid, dt, past, past[-1], cap)
        peak = float(np.abs(past).max())
        while integ.j < cap:
            integ.run(block)
            last = float(np.abs(integ.solution[-block:]).max())
            peak = max(peak, last)
            if last <= rel_tol * peak:
                break
    return Trajectory(dt, cl.h, integ.solution[:, :, 0].copy(), past[:, :, 0].copy())


@dataclass(frozen=True)
class StabilityFit:
    status: str  # "stable" | "unstable" | "inconclusive"
    gamma: float
    beta: float
    final_ratio: float  # ||K(T)|| / ||K(0+)||

    @property
    def stable(self) -> bool:
        return self.status == "stable"


@dataclass(frozen=True)
class FundamentalMatrix:
    """``K(t_j)`` for ``t_j = j*dt``; ``K = 0`` for ``t < 0`` and ``K(0) = I``."""

    dt: float
    h: float
    K: Array  # (N+1, n, n)
    fit: StabilityFit = field(repr=False)

    @property
    def n(self) -> int:
        return self.K.shape[1]

    @property
    def horizon(self) -> float:
        return self.dt * (len(self.K) - 1)

    @property
    def times(self) -> Array:
        return self.dt * np.arange(len(self.K))

    @property
    def gamma(self) -> float:
        return self.fit.gamma

    @property
    def beta(self) -> float:
        return self.fit.beta

    def at(self, t, left: bool = False) -> Array:
        """Linear interpolation of ``K``; ``left=True`` gives ``K(0-) = 0`` at ``t = 0``."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t > self.horizon * (1 + 1e-12) + 1e-12):
            raise ValueError(f"t beyond stored horizon {self.horizon}")
        u = np.clip(t / self.dt, 0, len(self.K) - 1)
        i0 = np.minimum(np.floor(u).astype(int), len(self.K) - 2)
        frac = (u - i0)[:, None, None]
        out = (1 - frac) * self.K[i0] + frac * self.K[i0 + 1]
        neg = t < 0 if not left else t <= 0
        out[neg] = 0.0
        return out[0] if scalar else out

    def index(self, j) -> Array:
        """``K`` at integer step indices (zero for negative indices)."""
        j = np.asarray(j)
        out = self.K[np.clip(j, 0, len(self.K) - 1)]
        out[j < 0] = 0.0
        return out


def _decay_fit(norms: Array, dt: float, h: float) -> tuple[float, float]:
    """Least squares on the log of a forward running-max envelope, final half only."""
    N = len(norms) - 1
    start = N // 2
    w = max(1, min(int(round(2 * h / dt)), (N - start) // 2))
    tail = norms[start:]
    env = np.lib.stride_tricks.sliding_window_view(tail, w + 1).max(axis=1)
    tt = dt * (start + np.arange(len(env)))
    y = np.log(np.maximum(env, 1e-300))
    if len(tt) < 2:
        return float("nan"), float("nan")
    slope, _ = np.polyfit(tt, y, 1)
    beta = -float(slope)
    times = dt * np.arange(N + 1)
    gamma = float(np.max(norms * np.exp(beta * times)))
    return gamma, beta


def assess_stability(norms: Array, dt: float, h: float) -> StabilityFit:
    gamma, beta = _decay_fit(norms, dt, h)
    ratio = float(norms[-1] / norms[0])
    beta_tol = 1e-3 / h
    if not np.isfinite(beta):
        status = "inconclusive"
    elif beta > 0 and ratio < 1e-3:
        status = "stable"
    elif beta < -beta_tol:
        status = "unstable"
    else:
        status = "inconclusive"
    return StabilityFit(status, gamma, beta, ratio)


def fundamental_matrix(cl: ClosedLoopSystem, T: float | None = None, dt: float | None = None) -> FundamentalMatrix:
    """Integrate ``K' = K A0 + K(t-h) A1 + int K(t+theta) G(theta) dtheta``.

    The transpose satisfies the left-multiplied form, which is what the
    integrator solves.  With ``T=None`` the horizon grows in blocks of five
    delays until ``||K||`` over the last block falls below ``1e-6`` of its
    peak (capped at 200 delays, or stopped early once growth is evident).
    """
    h = cl.h
    dt = h / DEFAULT_STEPS_PER_DELAY if dt is None else dt
    m = steps_per_delay(h, dt)
    n = cl.n
    GT = np.transpose(cl.G, (0, 2, 1))
    past = np.zeros((m + 1, n, n))
    if T is not None:
        n_steps = int(round(T / dt))
        integ = DelayIntegrator(cl.A0.T, cl.A1.T, GT, cl.grid, dt, past, np.eye(n), n_steps)
        integ.run(n_steps)
    else:
        block = BLOCK_DELAYS * m
        cap = MAX_DELAYS * m
        integ = DelayIntegrator(cl.A0.T, cl.A1.T, GT, cl.grid, dt, past, np.eye(n), cap)
        peak = 1.0
        first_block_peak = None
        while integ.j < cap:
            integ.run(block)
            norms = node_norms(integ.solution[-block:])
            peak = max(peak, float(norms.max()))
            if first_block_peak is None:
                first_block_peak = peak
            if norms.max() < DECAY_TOL * peak:
                break
            if norms.max() > 1e8 * first_block_peak:
                break
    Z = integ.solution
    K = np.transpose(Z, (0, 2, 1)).copy()
    fit = assess_stability(node_norms(K), dt, h)
    return FundamentalMatrix(dt, h, K, fit)


def is_exponentially_stable(fm: FundamentalMatrix) -> StabilityFit:
    """Stable iff the fitted rate is positive and ``||K(T)|| < 1e-3 ||K(0+)||``."""
    return fm.fit


def _merge_nodes(parts, lo, hi, tol):
    x = np.concatenate([np.atleast_1d(p) for p in parts] + [[lo, hi]])
    x = x[(x >= lo - tol) & (x <= hi + tol)]
    x = np.clip(np.sort(x), lo, hi)
    keep = np.concatenate([[True], np.diff(x) > tol])
    return x[keep]


def _trapz(x, f):
    dx = np.diff(x).reshape((-1,) + (1,) * (f.ndim - 1))
    return np.sum(0.5 * dx * (f[1:] + f[:-1]), axis=0)


def _inner_distributed(fm: FundamentalMatrix, cl: ClosedLoopSystem, t: float, theta: float) -> Array:
    """``int_{-h}^{theta} K(t - theta + xi) G(xi) dxi`` split at the jump of ``K``."""
    h = cl.h
    lo = max(-h, theta - t)
    if lo >= theta:
        return np.zeros((cl.n, cl.n))
    tol = 1e-12 * h
    grid_nodes = cl.grid.nodes
    s_lo, s_hi = t - theta + lo, t
    js = np.arange(np.ceil(s_lo / fm.dt - 1e-9), np.floor(s_hi / fm.dt + 1e-9) + 1)
    xi = _merge_nodes([grid_nodes, theta - t + fm.dt * js], lo, theta, tol)
    Kv = fm.at(np.maximum(t - theta + xi, 0.0))
    Gv = cl.grid.interp(cl.G, xi)
    return _trapz(xi, Kv @ Gv)


def khat_kernel(fm: FundamentalMatrix, cl: ClosedLoopSystem, t: float, theta: float) -> Array:
    """``K(t-theta-h) A1 + int_{-h}^{theta} K(t-theta+xi) G(xi) dxi`` (right limit at the jump)."""
    if t > fm.horizon + 1e-12:
        raise ValueError(f"t={t} outside the stored horizon {fm.horizon}")
    out = fm.at(t - theta - cl.h) @ cl.A1
    if cl.has_distributed:
        out = out + _inner_distributed(fm, cl, t, theta)
    return out


def cauchy_solution(fm: FundamentalMatrix, cl: ClosedLoopSystem, phi: History, t: float) -> Array:
    """``x(t) = K(t) phi(0) + int_{-h}^{0} Khat(t, theta) phi(theta) dtheta``."""
    if t > fm.horizon + 1e-12 or t < 0:
        raise ValueError(f"t={t} outside [0, {fm.horizon}]")
    h = cl.h
    tol = 1e-12 * h
    x = fm.at(t) @ phi.at_zero

    # pointwise-delay term: K(t-theta-h) vanishes for theta > t-h
    hi = min(0.0, t - h)
    if hi > -h + tol:
        s_nodes = fm.dt * np.arange(np.ceil(max(t - h - hi, 0.0) / fm.dt - 1e-9),
                                    np.floor(t / fm.dt + 1e-9) + 1)
        th = _merge_nodes([cl.grid.nodes, t - h - s_nodes], -h, hi, tol)
        Kv = fm.at(t - th - h)
        f = np.einsum("kij,jl,kl->ki", Kv, cl.A1, phi(th))
        x = x + _trapz(th, f)

    if cl.has_distributed and t > 0:
        th = _merge_nodes([cl.grid.nodes, [t - h]], -h, 0.0, tol)
        inner = np.array([_inner_distributed(fm, cl, t, a) for a in th])
        f = np.einsum("kij,kj->ki", inner, phi(th))
        x = x + _trapz(th, f)
    return x
