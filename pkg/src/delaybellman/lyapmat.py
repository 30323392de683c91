"""Delay Lyapunov matrix ``U(tau, M) = int_0^inf K(t)^T M K(t + tau) dt`` by quadrature.

Lags are multiples of the fundamental-matrix step, so every quadrature node
of ``K(t + tau)`` is a stored sample.  Negative lags are summed directly over
``t >= |tau|`` (where ``K(t + tau)`` is nonzero) rather than obtained from the
transpose identity, which keeps the symmetry residual an actual check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ddesim import FundamentalMatrix
from .errors import GridError, UnstableError
from .sysmodel import Array, ClosedLoopSystem, spectral_norm, trapz_weights

READINGS = ("shifted", "zero_extension")


def _require_stable(fm: FundamentalMatrix) -> None:
    if fm.fit.status != "stable":
        raise UnstableError(
            f"closed loop is not exponentially stable (decay fit: {fm.fit.status}, "
            f"beta={fm.beta:.3g}); the Lyapunov integral is undefined"
        )


def _lag_sum(fm: FundamentalMatrix, M: Array, L: int) -> Array:
    """Trapezoid sum of ``K(t)^T M K(t + L dt)`` for integer ``L`` of either sign."""
    K = fm.K
    N = len(K) - 1
    a = abs(L)
    if a > N:
        return np.zeros((fm.n, fm.n))
    w = trapz_weights(N - a, fm.dt)
    if L >= 0:
        left, right = K[:N - a + 1], K[a:]
    else:
        # t runs over [a dt, T]; K(t - a dt) then starts at K(0+)
        left, right = K[a:], K[:N - a + 1]
    return np.einsum("j,jba,bc,jcd->ad", w, left, M, right, optimize=True)


def tail_bound(fm: FundamentalMatrix, M: Array, tau: float) -> float:
    """Bound on the truncated part ``int_{T-tau}^inf`` of the Lyapunov integral."""
    beta, gamma, T = fm.beta, fm.gamma, fm.horizon
    if not beta > 0:
        return float("inf")
    return gamma**2 * spectral_norm(M) * np.exp(-beta * (2 * T - abs(tau))) / (2 * beta)


def lyapunov_matrix(fm: FundamentalMatrix, M, tau: float) -> Array:
    """``U(tau, M)``; off-grid lags are linear interpolants of the two nearest grid lags."""
    _require_stable(fm)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    u = tau / fm.dt
    lo = int(np.floor(u + 1e-9))
    frac = u - lo
    if abs(frac) < 1e-9:
        return _lag_sum(fm, M, lo)
    return (1 - frac) * _lag_sum(fm, M, lo) + frac * _lag_sum(fm, M, lo + 1)


@dataclass(frozen=True)
class LyapunovMatrix:
    """Samples of ``U(tau, M)`` on ``tau_k = k*dt``, ``k = -L..L``."""

    M: Array
    dt: float
    U: Array  # (2L+1, n, n)
    horizon: float
    tail: float

    @property
    def n_lags(self) -> int:
        return (len(self.U) - 1) // 2

    @property
    def taus(self) -> Array:
        L = self.n_lags
        return self.dt * np.arange(-L, L + 1)

    @property
    def span(self) -> float:
        return self.dt * self.n_lags

    def lag(self, k) -> Array:
        """Sample at integer lag index ``k`` (``tau = k*dt``)."""
        k = np.asarray(k)
        if np.any(np.abs(k) > self.n_lags):
            raise GridError("lag outside the sampled range")
        return self.U[k + self.n_lags]

    def __call__(self, tau) -> Array:
        tau = np.asarray(tau, dtype=float)
        u = tau / self.dt + self.n_lags
        if np.any(u < -1e-9) or np.any(u > 2 * self.n_lags + 1e-9):
            raise GridError("tau outside the sampled range")
        u = np.clip(u, 0, 2 * self.n_lags)
        i0 = np.minimum(np.floor(u).astype(int), 2 * self.n_lags - 1)
        frac = (u - i0)[..., None, None]
        return (1 - frac) * self.U[i0] + frac * self.U[i0 + 1]

    def to_csv(self, path) -> None:
        n = self.U.shape[1]
        cols = [f"U{i + 1}{j + 1}" for i in range(n) for j in range(n)]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau"] + cols)
            for tau, U in zip(self.taus, self.U):
                w.writerow([repr(float(tau))] + [repr(float(v)) for v in U.ravel()])


def lyapunov_samples(fm: FundamentalMatrix, M, span: float | None = None) -> LyapunovMatrix:
    """Sample ``U(., M)`` on ``[-span, span]`` (default ``h`` plus two steps)."""
    _require_stable(fm)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    span = fm.h + 2 * fm.dt if span is None else span
    L = int(np.ceil(span / fm.dt - 1e-9))
    U = np.array([_lag_sum(fm, M, k) for k in range(-L, L + 1)])
    return LyapunovMatrix(M, fm.dt, U, fm.horizon, tail_bound(fm, M, span))


def basis_tensor(fm: FundamentalMatrix, lag_step: int, count: int) -> Array:
    """``T[k, c, d, a, b] = sum_t w_t K(t)[c, a] K(t + k*lag_step*dt)[d, b]`` for ``k = 0..count``.

    ``U(k*lag_step*dt, M) = einsum('cd,cdab->ab', M, T[k])``; negative lags
    follow from ``T(-tau)[c, d, a, b] = T(tau)[d, c, b, a]``.
    """
    _require_stable(fm)
    K = fm.K
    n = fm.n
    N = len(K) - 1
    flat = K.reshape(N + 1, n * n)  # column index (c, a)
    out = np.zeros((count + 1, n, n, n, n))
    for k in range(count + 1):
        L = k * lag_step
        if L > N:
            break
        w = trapz_weights(N - L, fm.dt)
        P = (w[:, None] * flat[:N - L + 1]).T @ flat[L:]  # ((c,a),(d,b))
        out[k] = P.reshape(n, n, n, n).transpose(0, 2, 1, 3)
    return out


@dataclass(frozen=True)
class LyapunovResiduals:
    dyn_res: float
    sym_res: float
    jump_res: float
    reading: str

    def as_dict(self) -> dict:
        return {"dyn_res": self.dyn_res, "sym_res": self.sym_res, "jump_res": self.jump_res,
                "reading": self.reading}


def lyap_property_residuals(lm: LyapunovMatrix, cl: ClosedLoopSystem, fm: FundamentalMatrix | None = None,
                            reading: str = "shifted") -> LyapunovResiduals:
    """Residuals of the dynamic, symmetry and jump conditions satisfied by ``U``.

    ``reading="shifted"`` checks ``U' = U A0 + U(tau-h) A1 + int U(tau+theta) G(theta)``;
    ``reading="zero_extension"`` uses ``G(theta+tau)`` extended by zero instead.
    The symmetry check needs ``U(., M^T)``, computed from ``fm`` when ``M`` is
    not symmetric.
    """
    if reading not in READINGS:
        raise ValueError(f"reading must be one of {READINGS}")
    dt, h = lm.dt, cl.h
    m = int(round(h / dt))
    if abs(m * dt - h) > 1e-9 * h:
        raise GridError("Lyapunov samples must use a step dividing h")
    if lm.n_lags < m + 1 or lm.n_lags < 2:
        raise GridError("need tau coverage of at least [-h-dt, h+dt]")

    # dynamic condition at interior nodes tau_k, k = 1..m-1
    theta = -h + dt * np.arange(m + 1)
    w = trapz_weights(m, dt)
    dyn = 0.0
    for k in range(1, m):
        dU = (lm.lag(k + 1) - lm.lag(k - 1)) / (2 * dt)
        window = lm.lag(np.arange(k - m, k + 1))
        g_arg = theta if reading == "shifted" else theta + k * dt
        Gv = cl.grid.interp(cl.G, g_arg)
        integral = np.einsum("i,iab,ibc->ac", w, window, Gv)
        rhs = lm.lag(k) @ cl.A0 + lm.lag(k - m) @ cl.A1 + integral
        dyn = max(dyn, spectral_norm(dU - rhs))

    # symmetry U(-tau, M) = U(tau, M^T)^T
    if np.array_equal(lm.M, lm.M.T):
        other = lm
    else:
        if fm is None:
            raise ValueError("non-symmetric M needs the fundamental matrix for the symmetry check")
        other = lyapunov_samples(fm, lm.M.T, lm.span)
    L = lm.n_lags
    ks = np.arange(0, L + 1)
    diff = lm.lag(-ks) - np.transpose(other.lag(ks), (0, 2, 1))
    sym = float(np.max(np.linalg.norm(diff, ord=2, axis=(1, 2))))

    # jump of the derivative at zero (second-order one-sided differences)
    d_plus = (-3 * lm.lag(0) + 4 * lm.lag(1) - lm.lag(2)) / (2 * dt)
    d_minus = (3 * lm.lag(0) - 4 * lm.lag(-1) + lm.lag(-2)) / (2 * dt)
    jump = spectral_norm(d_plus - d_minus + lm.M)
    return LyapunovResiduals(dyn, sym, jump, reading)
