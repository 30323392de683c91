"""Bellman kernels of a stabilizing law and evaluation of the quadratic functional.

Two routes build the kernels ``Pi0, Pi1(theta), Pi2(xi, theta)``:

* ``"lyapunov"``: every kernel is assembled from lags of the delay Lyapunov
  matrix.  All terms share one aggregated kernel
  ``Y(c) = int_0^inf K^T Q K(t+c) + P^T R P(t+c) dt`` with
  ``P(t) = Gamma0 K(t) + int Gamma1(theta) K(t+theta) dtheta``, which is a
  weighted sum of ``U(c + l*dtheta, W_l)``.
* ``"direct"``: time quadrature of products of ``K``, ``Khat`` and the control
  kernels on the integration grid.  Used as an oracle.

While ``t < h`` the distributed part of the control still reads the initial
function itself, not only its propagated response.  Both routes include the
resulting terms (``history_corrections``); without them the functional does
not reproduce the simulated cost when ``Gamma1`` is nonzero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ddesim import FundamentalMatrix, integrate_closed_loop, steps_per_delay, DEFAULT_STEPS_PER_DELAY
from .errors import DimensionError, GridError
from .lyapmat import basis_tensor
from .sysmodel import Array, ClosedLoopSystem, ControlLaw, CostWeights, History, ThetaGrid, trapz_weights

ROUTES = ("lyapunov", "direct")


@dataclass(frozen=True)
class WeightKernels:
    """``M1 = Q + G0^T R G0``, ``M2(theta) = G0^T R G1(theta)``, ``M3(t1, t2) = G1(t1)^T R G1(t2)``."""

    M1: Array
    M2: Array  # (N+1, n, n)
    M3: Array  # (N+1, N+1, n, n)
    weights: CostWeights = field(repr=False)
    law: ControlLaw = field(repr=False)


def weight_kernels(w: CostWeights, law: ControlLaw) -> WeightKernels:
    g0, g1, R = law.gamma0, law.gamma1, w.R
    if R.shape != (g0.shape[0],) * 2 or w.Q.shape != (g0.shape[1],) * 2:
        raise DimensionError("cost weights do not match the control law dimensions")
    M1 = w.Q + g0.T @ R @ g0
    M2 = np.einsum("ri,rs,ksj->kij", g0, R, g1)
    M3 = np.einsum("kri,rs,lsj->klij", g1, R, g1)
    return WeightKernels(M1, M2, M3, w, law)


def lag_step(grid: ThetaGrid, dt: float) -> int:
    s = int(round(grid.step / dt))
    if s < 1 or abs(s * dt - grid.step) > 1e-9 * grid.step:
        raise GridError(f"theta step {grid.step} is not a multiple of dt={dt}")
    return s


class LyapunovAccess:
    """``U(k*dtheta, M)`` for ``|k| <= 2*n_theta`` from one basis tensor of ``K``."""

    def __init__(self, fm: FundamentalMatrix, grid: ThetaGrid):
        self.fm, self.grid = fm, grid
        self.n_theta = grid.n_theta
        pos = basis_tensor(fm, lag_step(grid, fm.dt), 2 * self.n_theta)
        neg = np.transpose(pos[1:][::-1], (0, 2, 1, 4, 3))
        self.T = np.concatenate([neg, pos])  # index k + 2*n_theta

    def U(self, k: int, M) -> Array:
        return np.einsum("cd,cdab->ab", M, self.T[k + 2 * self.n_theta])

    def aggregated(self, wk: WeightKernels) -> Array:
        """``Y(k*dtheta)`` for ``k = -n_theta..n_theta``, shape ``(2N+1, n, n)``."""
        N = self.n_theta
        w = self.grid.weights
        n = wk.M1.shape[0]
        W = np.zeros((2 * N + 1, n, n))  # index l + N
        W[N] += wk.M1
        i = np.arange(N + 1)
        W[i] += w[:, None, None] * wk.M2  # l = i - N
        W[2 * N - i] += w[:, None, None] * np.transpose(wk.M2, (0, 2, 1))  # l = N - i
        ww = w[:, None] * w[None, :]
        for l in range(-N, N + 1):
            i1 = np.arange(max(0, -l), min(N, N - l) + 1)
            W[l + N] += np.einsum("k,kab->ab", ww[i1, i1 + l], wk.M3[i1, i1 + l])
        # Y(k) = sum_l W(l) : T(k + l), k + l in [-2N, 2N]
        win = np.lib.stride_tricks.sliding_window_view(self.T, 2 * N + 1, axis=0)  # (2N+1, n,n,n,n, 2N+1)
        return np.einsum("lcd,kcdabl->kab", W, win, optimize=True)


def _lower_trapz(N: int, step: float) -> Array:
    """Row ``b`` holds trapezoid weights over nodes ``0..b`` (integral on ``[-h, theta_b]``)."""
    W = np.zeros((N + 1, N + 1))
    for b in range(1, N + 1):
        W[b, :b + 1] = trapz_weights(b, step)
    return W


def _h_table(Y: Array, G: Array, Wtr: Array) -> Array:
    """``H(p, b) = sum_l Wtr[b, l] Y(p - b + l) G(theta_l)`` for ``p, b = 0..N``."""
    N = len(G) - 1
    YG = np.einsum("kab,lbc->klac", Y, G)  # Y index k + N
    n = Y.shape[1]
    H = np.zeros((N + 1, N + 1, n, n))
    p = np.arange(N + 1)
    for b in range(1, N + 1):
        for l in range(b + 1):
            H[:, b] += Wtr[b, l] * YG[p - b + l + N, l]
    return H


def pi0(access: LyapunovAccess, wk: WeightKernels) -> Array:
    Y0 = access.aggregated(wk)[access.n_theta]
    return 0.5 * (Y0 + Y0.T)


def pi1(access: LyapunovAccess, wk: WeightKernels, cl: ClosedLoopSystem, correct_history: bool = True) -> Array:
    N = access.n_theta
    Y = access.aggregated(wk)
    H = _h_table(Y, cl.G, _lower_trapz(N, access.grid.step))
    i = np.arange(N + 1)
    P1 = Y[N - i] @ cl.A1 + H[0]
    if correct_history:
        P1 = P1 + history_corrections(access.fm, cl, wk)[0]
    return P1


def pi2(access: LyapunovAccess, wk: WeightKernels, cl: ClosedLoopSystem, correct_history: bool = True,
        symmetrize: bool = True) -> tuple[Array, float]:
    """Returns ``(Pi2, asymmetry)`` where asymmetry is measured before symmetrizing."""
    N = access.n_theta
    Y = access.aggregated(wk)
    Wtr = _lower_trapz(N, access.grid.step)
    H = _h_table(Y, cl.G, Wtr)
    A1, G = cl.A1, cl.G
    a = np.arange(N + 1)
    lag = a[:, None] - a[None, :] + N
    P2 = A1.T @ Y[lag] @ A1 + A1.T @ H + np.transpose(H, (1, 0, 3, 2)) @ A1
    GT = np.transpose(G, (0, 2, 1))
    for ai in range(1, N + 1):
        for j in range(ai + 1):
            P2[ai] += Wtr[ai, j] * (GT[j] @ H[ai - j])
    if correct_history:
        P2 = P2 + history_corrections(access.fm, cl, wk)[1]
    asym = _asymmetry(P2)
    if symmetrize:
        P2 = 0.5 * (P2 + np.transpose(P2, (1, 0, 3, 2)))
    return P2, asym


def _asymmetry(P2: Array) -> float:
    d = P2 - np.transpose(P2, (1, 0, 3, 2))
    scale = max(float(np.abs(P2).max()), 1e-300)
    return float(np.abs(d).max() / scale)


@dataclass
class _TimeKernels:
    """Kernels on ``t_j = j*dt`` (``j = 0..J``) and ``sigma`` on the theta grid.

    ``*L``/``*R`` are left/right limits in ``t``; they differ only at ``t = sigma + h``.
    """

    K: Array
    P: Array
    KhL: Array
    KhR: Array
    HL: Array  # Gamma0 Khat + int Gamma1 Khat(t + theta) (no history term)
    HR: Array
    FL: Array  # history term Gamma1(sigma - t) 1[t <= sigma + h]
    FR: Array


def _time_kernels(fm: FundamentalMatrix, cl: ClosedLoopSystem, law: ControlLaw, J: int) -> _TimeKernels:
    dt, h, grid = fm.dt, cl.h, cl.grid
    m = steps_per_delay(h, dt)
    s = lag_step(grid, dt)
    N = grid.n_theta
    n = cl.n
    if J > len(fm.K) - 1:
        raise GridError("requested time range exceeds the fundamental-matrix horizon")
    th_dt = -h + dt * np.arange(m + 1)
    Gd = grid.interp(cl.G, th_dt)
    G1d = grid.interp(law.gamma1, th_dt)
    g0 = law.gamma0

    pad = m
    KR = np.zeros((pad + J + 1, n, n))
    KR[pad:] = fm.K[:J + 1]
    KL = KR.copy()
    KL[pad] = 0.0
    jj = np.arange(J + 1)

    def side_weights(p):
        wl = np.full(p + 1, 0.5 * dt)
        wr = np.full(p + 1, 0.5 * dt)
        wl[0] = 0.0
        wr[-1] = 0.0
        return wl, wr

    # P(t) = G0 K(t) + int G1(theta) K(t + theta) dtheta
    wl, wr = side_weights(m)
    P = g0 @ fm.K[:J + 1]
    for k in range(m + 1):
        idx = pad - m + k + jj
        P = P + G1d[k] @ (wl[k] * KL[idx] + wr[k] * KR[idx])

    # Khat(t, sigma_i), sigma_i = -h + p_i dt
    KhL = np.zeros((J + 1, N + 1, n, n))
    KhR = np.zeros_like(KhL)
    for i in range(N + 1):
        p = i * s
        idx0 = pad - p + jj
        integral = np.zeros((J + 1, n, n))
        if p > 0:
            wl, wr = side_weights(p)
            for k in range(p + 1):
                idx = idx0 + k
                integral += (wl[k] * KL[idx] + wr[k] * KR[idx]) @ Gd[k]
        KhL[:, i] = KL[idx0] @ cl.A1 + integral
        KhR[:, i] = KR[idx0] @ cl.A1 + integral

    # Hhat0(t, sigma) = G0 Khat(t, sigma) + int G1(theta) Khat(t + theta, sigma) dtheta
    r = g0.shape[0]
    KhLe = np.zeros((pad + J + 1, N + 1, n, n))
    KhRe = np.zeros_like(KhLe)
    KhLe[pad:], KhRe[pad:] = KhL, KhR
    wl, wr = side_weights(m)
    conv = np.zeros((J + 1, N + 1, r, n))
    if np.any(G1d != 0):
        for k in range(m + 1):
            idx = pad - m + k + jj
            conv += np.einsum("rn,jinm->jirm", G1d[k], wl[k] * KhLe[idx] + wr[k] * KhRe[idx])
    HL = np.einsum("rn,jinm->jirm", g0, KhL) + conv
    HR = np.einsum("rn,jinm->jirm", g0, KhR) + conv

    FL = np.zeros((J + 1, N + 1, r, n))
    FR = np.zeros_like(FL)
    for i in range(N + 1):
        p = i * s
        jmax = min(p, J)
        js = np.arange(jmax + 1)
        FL[js, i] = G1d[p - js]
        FR[js, i] = G1d[p - js]
        if p <= J:
            FR[p, i] = 0.0
    return _TimeKernels(fm.K[:J + 1], P, KhL, KhR, HL, HR, FL, FR)


def _side_time_weights(J: int, dt: float) -> tuple[Array, Array]:
    wL = np.full(J + 1, 0.5 * dt)
    wR = np.full(J + 1, 0.5 * dt)
    wL[0] = 0.0
    wR[-1] = 0.0
    return wL, wR


def history_corrections(fm: FundamentalMatrix, cl: ClosedLoopSystem, wk: WeightKernels) -> tuple[Array, Array]:
    """Terms from the control reading the initial function directly on ``[0, h]``.

    Returns ``(dPi1, dPi2)`` with ``dPi1(sigma) = int P^T R F(t, sigma) dt`` and
    ``dPi2 = int Hhat0^T R F + F^T R Hhat0 + F^T R F dt``, where
    ``F(t, sigma) = Gamma1(sigma - t)`` for ``t <= sigma + h``.
    """
    law, R = wk.law, wk.weights.R
    N = cl.grid.n_theta
    n = cl.n
    if not np.any(law.gamma1 != 0):
        return np.zeros((N + 1, n, n)), np.zeros((N + 1, N + 1, n, n))
    m = steps_per_delay(cl.h, fm.dt)
    tk = _time_kernels(fm, cl, law, m)
    wL, wR = _side_time_weights(m, fm.dt)
    d1 = np.einsum("j,jra,rs,jisb->iab", wL, tk.P, R, tk.FL) + np.einsum("j,jra,rs,jisb->iab", wR, tk.P, R, tk.FR)
    d2 = np.zeros((N + 1, N + 1, n, n))
    for w, H, F in ((wL, tk.HL, tk.FL), (wR, tk.HR, tk.FR)):
        RF = np.einsum("rs,jisb->jirb", R, F)
        cross = np.einsum("j,jira,jkrb->ikab", w, H, RF, optimize=True)
        d2 += cross + np.transpose(cross, (1, 0, 3, 2)) + np.einsum("j,jira,jkrb->ikab", w, F, RF, optimize=True)
    return d1, d2


@dataclass(frozen=True)
class BellmanKernels:
    """``V(phi) = phi0^T Pi0 phi0 + 2 phi0^T int Pi1 phi + int int phi^T Pi2 phi``."""

    pi0: Array
    pi1: Array  # (N+1, n, n)
    pi2: Array  # (N+1, N+1, n, n)
    grid: ThetaGrid = field(repr=False)
    asymmetry: float = 0.0
    route: str = "lyapunov"

    @property
    def n(self) -> int:
        return self.pi0.shape[0]

    def pi1_csv(self, path) -> None:
        n = self.n
        cols = [f"P{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta"] + cols)
            for th, P in zip(self.grid.nodes, self.pi1):
                w.writerow([repr(float(th))] + [repr(float(v)) for v in P.ravel()])

    def pi2_csv(self, path) -> None:
        n = self.n
        cols = [f"P{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        nodes = self.grid.nodes
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["xi", "theta"] + cols)
            for a, xi in enumerate(nodes):
                for b, th in enumerate(nodes):
                    w.writerow([repr(float(xi)), repr(float(th))] + [repr(float(v)) for v in self.pi2[a, b].ravel()])


def bellman_kernels(fm: FundamentalMatrix, cl: ClosedLoopSystem, wk: WeightKernels, route: str = "lyapunov",
                    correct_history: bool = True) -> BellmanKernels:
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    if route == "direct":
        return _direct_kernels(fm, cl, wk, correct_history)
    access = LyapunovAccess(fm, cl.grid)
    P0 = pi0(access, wk)
    P1 = pi1(access, wk, cl, correct_history)
    P2, asym = pi2(access, wk, cl, correct_history)
    return BellmanKernels(P0, P1, P2, cl.grid, asym, route)


def _direct_kernels(fm: FundamentalMatrix, cl: ClosedLoopSystem, wk: WeightKernels,
                    correct_history: bool) -> BellmanKernels:
    Q, R = wk.weights.Q, wk.weights.R
    J = len(fm.K) - 1
    tk = _time_kernels(fm, cl, wk.law, J)
    wt = trapz_weights(J, fm.dt)
    P0 = np.einsum("j,jba,bc,jcd->ad", wt, tk.K, Q, tk.K) + np.einsum("j,jra,rs,jsb->ab", wt, tk.P, R, tk.P)
    wL, wR = _side_time_weights(J, fm.dt)
    N = cl.grid.n_theta
    n = cl.n
    P1 = np.zeros((N + 1, n, n))
    P2 = np.zeros((N + 1, N + 1, n, n))
    f = 1.0 if correct_history else 0.0
    for w, Kh, H, F in ((wL, tk.KhL, tk.HL, tk.FL), (wR, tk.KhR, tk.HR, tk.FR)):
        Ht = H + f * F
        P1 += np.einsum("j,jba,bc,jicd->iad", w, tk.K, Q, Kh, optimize=True)
        P1 += np.einsum("j,jra,rs,jisb->iab", w, tk.P, R, Ht, optimize=True)
        P2 += np.einsum("j,jiba,bc,jkcd->ikad", w, Kh, Q, Kh, optimize=True)
        P2 += np.einsum("j,jira,rs,jksb->ikab", w, Ht, R, Ht, optimize=True)
    asym = _asymmetry(P2)
    P2 = 0.5 * (P2 + np.transpose(P2, (1, 0, 3, 2)))
    return BellmanKernels(0.5 * (P0 + P0.T), P1, P2, cl.grid, asym, "direct")


def evaluate_functional(k: BellmanKernels, phi: History) -> float:
    if len(phi.grid) != len(k.grid) or not np.isclose(phi.grid.h, k.grid.h):
        raise GridError("history grid does not match the kernel grid")
    w = k.grid.weights
    x0 = phi.at_zero
    f = phi.samples
    v = x0 @ k.pi0 @ x0
    v += 2.0 * x0 @ np.einsum("i,iab,ib->a", w, k.pi1, f)
    v += np.einsum("i,k,ia,ikab,kb->", w, w, f, k.pi2, f)
    return float(v)


def control_signal(law: ControlLaw, grid: ThetaGrid, h: float, dt: float, states: Array, past: Array) -> Array:
    """``u(t_j) = Gamma0 x(t_j) + int Gamma1(theta) x(t_j + theta) dtheta`` on the step grid."""
    m = steps_per_delay(h, dt)
    full = np.concatenate([past[:-1], states])
    G1d = grid.interp(law.gamma1, -h + dt * np.arange(m + 1))
    wts = trapz_weights(m, dt)
    win = np.lib.stride_tricks.sliding_window_view(full, m + 1, axis=0)  # (N+1, n, m+1)
    u = states @ law.gamma0.T
    u += np.einsum("k,krn,jnk->jr", wts, G1d, win, optimize=True)
    return u


@dataclass(frozen=True)
class SimulatedCost:
    value: float  # quadrature over [0, T] plus the tail estimate
    tail: float
    horizon: float


def simulate_cost_detail(cl: ClosedLoopSystem, law: ControlLaw, w: CostWeights, phi: History,
                         T: float | None = None, dt: float | None = None) -> SimulatedCost:
    """Simulated cost with the tail past ``T`` estimated from the decay over the last delay.

    With ``T=None`` the horizon grows until the state has decayed by ``1e-7``
    relative to its peak, so the integrand has dropped by about ``1e-14``.
    """
    h = cl.h
    dt = h / DEFAULT_STEPS_PER_DELAY if dt is None else dt
    m = steps_per_delay(h, dt)
    tr = integrate_closed_loop(cl, phi, T, dt, rel_tol=1e-7)
    f = _cost_integrand(tr, law, cl, w)
    J = float(np.dot(trapz_weights(len(f) - 1, dt), f))
    tail = 0.0
    if f[-1] > 0 and f[-1 - m] > f[-1]:
        rate = np.log(f[-1 - m] / f[-1]) / h
        tail = float(f[-1] / rate)
    return SimulatedCost(J + tail, tail, tr.horizon)


def _cost_integrand(tr, law, cl, w) -> Array:
    u = control_signal(law, cl.grid, cl.h, tr.dt, tr.states, tr.past)
    return np.einsum("ja,ab,jb->j", tr.states, w.Q, tr.states) + np.einsum("ja,ab,jb->j", u, w.R, u)


def simulate_cost(cl: ClosedLoopSystem, law: ControlLaw, w: CostWeights, phi: History,
                  T: float | None = None, dt: float | None = None) -> float:
    """``J = int_0^inf x^T Q x + u^T R u dt`` along the closed-loop solution from ``phi``."""
    return simulate_cost_detail(cl, law, w, phi, T, dt).value
