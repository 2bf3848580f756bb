"""Data model, piecewise linear mean and the replicate Gaussian likelihood."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K


class SlopeChangeError(Exception):
    """Base class; ``category`` is the machine-readable tag used by the CLI."""

    category = "error"


class DomainError(SlopeChangeError, ValueError):
    category = "domain-error"


class ConfigError(SlopeChangeError, ValueError):
    category = "config-error"


@dataclass
class Dataset:
    """Replicated measurements ``values[n, t - 1, r - 1]``, shape (N, T, R)."""

    values: np.ndarray
    variances: np.ndarray | None = None
    series_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DomainError(f"values must have shape (N, T, R), got {self.values.shape}")
        N, T, R = self.values.shape
        if N < 1 or R < 1:
            raise DomainError("need at least one series and one replicate")
        if T < 3:
            raise DomainError(f"need at least 3 time-points, got T={T}")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("all values must be finite")
        if self.variances is not None:
            v = np.asarray(self.variances, dtype=np.float64)
            if v.shape != (N, T):
                raise DomainError(f"variances must have shape {(N, T)}, got {v.shape}")
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise DomainError("variances must be finite and strictly positive")
            self.variances = v
        if not self.series_ids:
            self.series_ids = [str(i + 1) for i in range(N)]
        elif len(self.series_ids) != N:
            raise DomainError("one series id per series required")

    @property
    def n_series(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    @property
    def n_reps(self) -> int:
        return self.values.shape[2]

    def grand_mean(self) -> np.ndarray:
        """Per-time average over series and replicates (default prior mean)."""
        return self.values.mean(axis=(0, 2))

    def sufficient_stats(self):
        """Replicate means and within-replicate sums of squares, each (N, T)."""
        xbar = self.values.mean(axis=2)
        ss = ((self.values - xbar[:, :, None]) ** 2).sum(axis=2)
        return xbar, ss


@dataclass
class ChainState:
    """Number of change-points, their 1-based locations and the full mean vector."""

    ell: int
    tau: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=np.int64).reshape(-1)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.ell = int(self.ell)

    @property
    def n_times(self) -> int:
        return self.theta.shape[0]

    def knots(self, capacity: int | None = None) -> np.ndarray:
        """``[1, tau..., T]`` padded to ``capacity`` entries."""
        T = self.n_times
        size = max(capacity or 0, self.ell + 2)
        out = np.zeros(size, dtype=np.int64)
        out[0] = 1
        out[1:self.ell + 1] = self.tau
        out[self.ell + 1] = T
        return out

    def validate(self, L: int | None = None):
        T = self.n_times
        if self.tau.shape[0] != self.ell:
            raise DomainError(f"tau has {self.tau.shape[0]} entries but ell={self.ell}")
        bounds = np.concatenate(([1], self.tau, [T]))
        if self.ell and np.any(np.diff(bounds) <= 0):
            raise DomainError(f"change-points must satisfy 1 < tau_1 < ... < tau_ell < T, got {self.tau.tolist()}")
        if L is not None and self.ell > L:
            raise DomainError(f"ell={self.ell} exceeds the maximum L={L}")

    def copy(self) -> ChainState:
        return ChainState(self.ell, self.tau.copy(), self.theta.copy())


def piecewise_mean(t: int, state: ChainState, T: int | None = None) -> float:
    """Value at time ``t`` (1-based) of the continuous piecewise linear mean."""
    T = state.n_times if T is None else T
    if not 1 <= t <= T:
        raise DomainError(f"time index {t} outside 1..{T}")
    knots = state.knots()
    j = int(np.searchsorted(knots, t, side="left"))
    if knots[j] == t:
        return float(state.theta[t - 1])
    return float(K.interp_mean(state.theta, int(knots[j - 1]), int(knots[j]), int(t)))


def mean_curve(state: ChainState) -> np.ndarray:
    """The piecewise linear mean at every time-point."""
    out = np.empty(state.n_times)
    K.fill_mean(state.theta, state.knots(), state.ell, out)
    return out


def _as_obs(x_n) -> np.ndarray:
    x = np.asarray(x_n, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _check_variance(sigma2_n, T):
    s2 = np.asarray(sigma2_n, dtype=np.float64).reshape(-1)
    if s2.shape[0] != T:
        raise DomainError(f"expected {T} variances, got {s2.shape[0]}")
    if not np.all(s2 > 0):
        raise DomainError("variances must be strictly positive")
    return s2


def _stats(x):
    xbar = x.mean(axis=1)
    ss = ((x - xbar[:, None]) ** 2).sum(axis=1)
    return xbar, ss


def log_likelihood(x_n, state: ChainState, sigma2_n) -> float:
    """Gaussian log-likelihood of a (T, R) block given the piecewise mean."""
    x = _as_obs(x_n)
    T, R = x.shape
    if state.n_times != T:
        raise DomainError(f"state has {state.n_times} time-points, data has {T}")
    s2 = _check_variance(sigma2_n, T)
    xbar, ss = _stats(x)
    quad = K.loglik_quad(xbar, ss, R, s2, state.theta, state.knots(), state.ell)
    return float(K.loglik_const(R, s2) + quad)


def log_likelihood_delta(x_n, state: ChainState, new_state: ChainState, sigma2_n, changed_range=None) -> float:
    """``log_likelihood(new_state) - log_likelihood(state)``, recomputing only what moved.

    ``changed_range = (lo, hi)`` promises that the two states share theta and
    change-points outside the closed time window [lo, hi]; only segments that
    overlap the window are re-evaluated. Anything inconsistent (None,
    differing theta outside the window, ...) falls back to the full difference.
    """
    x = _as_obs(x_n)
    T, R = x.shape
    s2 = _check_variance(sigma2_n, T)
    xbar, ss = _stats(x)

    def full():
        return float(
            K.loglik_quad(xbar, ss, R, s2, new_state.theta, new_state.knots(), new_state.ell)
            - K.loglik_quad(xbar, ss, R, s2, state.theta, state.knots(), state.ell)
        )

    if changed_range is None:
        return full()
    lo, hi = int(changed_range[0]), int(changed_range[1])
    if not 1 <= lo <= hi <= T or state.n_times != T or new_state.n_times != T:
        return full()
    outside = np.ones(T, dtype=bool)
    outside[lo - 1:hi] = False
    same_outside = (
        np.array_equal(state.theta[outside], new_state.theta[outside])
        and np.array_equal(state.tau[(state.tau < lo) | (state.tau > hi)],
                           new_state.tau[(new_state.tau < lo) | (new_state.tau > hi)])
    )
    if not same_outside:
        return full()
    return float(_window_quad(xbar, ss, R, s2, new_state, lo, hi) - _window_quad(xbar, ss, R, s2, state, lo, hi))


def _window_quad(xbar, ss, R, s2, state, lo, hi):
    # segments (a, b] whose closure meets [lo, hi]; the t=1 term only if lo == 1
    knots = state.knots()
    out = 0.0
    if lo == 1:
        d = xbar[0] - state.theta[0]
        out += -0.5 * (ss[0] + R * d * d) / s2[0]
    for j in range(state.ell + 1):
        a, b = int(knots[j]), int(knots[j + 1])
        if b >= lo and a <= hi:
            out += K.seg_quad(xbar, ss, R, s2, state.theta, a, b)
    return out
