"""Prior densities on the means, the change-point locations and their number."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .model import ConfigError, DomainError

COMPLEXITY = "complexity"
TRUNCATED_POISSON = "truncated_poisson"


@dataclass
class PriorConfig:
    """Hyperparameters of the mean, location and count priors.

    ``mu0`` may be left as None and filled from the data (per-time grand
    mean). ``L`` defaults to ``T - 2``.
    """

    nu0: float = 0.1
    alpha: float = 2.0
    b: float = 3.72
    L: int | None = None
    ell_prior: str = COMPLEXITY
    poisson_lambda: float = 1.0
    poisson_max: int = 30
    mu0: np.ndarray | None = None

    def validate(self, T: int | None = None):
        if not self.nu0 > 0:
            raise ConfigError(f"nu0 must be positive, got {self.nu0}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.b > 0:
            raise ConfigError(f"b must be positive, got {self.b}")
        if self.ell_prior not in (COMPLEXITY, TRUNCATED_POISSON):
            raise ConfigError(f"unknown ell prior {self.ell_prior!r}")
        if self.ell_prior == TRUNCATED_POISSON and not (self.poisson_lambda > 0 and self.poisson_max >= 0):
            raise ConfigError("truncated Poisson needs lambda > 0 and a non-negative support maximum")
        if T is not None:
            L = self.max_changepoints(T)
            if not 0 <= L <= T - 2:
                raise ConfigError(f"L must lie in 0..{T - 2}, got {L}")
            if self.mu0 is not None and np.shape(self.mu0) != (T,):
                raise ConfigError(f"mu0 must have length {T}")
        return self

    def max_changepoints(self, T: int) -> int:
        return T - 2 if self.L is None else int(self.L)

    def packed(self, T: int):
        """``(fpar, ipar)`` vectors for the compiled kernels (tunables left at zero)."""
        fpar = np.zeros(K.N_FPAR)
        ipar = np.zeros(K.N_IPAR, dtype=np.int64)
        fpar[K.F_NU0] = self.nu0
        fpar[K.F_ALPHA] = self.alpha
        fpar[K.F_B] = self.b
        fpar[K.F_LAMBDA] = self.poisson_lambda
        ipar[K.I_L] = self.max_changepoints(T)
        ipar[K.I_ELL_KIND] = K.ELL_COMPLEXITY if self.ell_prior == COMPLEXITY else K.ELL_POISSON
        ipar[K.I_SUPPORT_MAX] = self.poisson_max
        ipar[K.I_USE_LIK] = 1
        return fpar, ipar


def log_prior_theta(theta, sigma2_n, cfg: PriorConfig, mu0=None) -> float:
    """Independent Normal(mu0_t, sigma2_t / nu0) log density summed over t."""
    theta = np.asarray(theta, dtype=np.float64)
    s2 = np.asarray(sigma2_n, dtype=np.float64)
    mu0 = np.asarray(cfg.mu0 if mu0 is None else mu0, dtype=np.float64)
    if theta.shape != s2.shape or theta.shape != mu0.shape:
        raise DomainError("theta, variances and mu0 must have the same length")
    if not np.all(s2 > 0):
        raise DomainError("variances must be strictly positive")
    return float(K.log_prior_theta_full(theta, mu0, s2, cfg.nu0))


def log_prior_tau(tau, ell: int, T: int) -> float:
    """Log probability of ordered locations ``tau`` given ``ell`` change-points.

    Returns ``-inf`` for configurations outside ``1 < t_1 < ... < t_ell < T``.
    """
    tau = np.asarray(tau, dtype=np.int64).reshape(-1)
    if tau.shape[0] != ell:
        return -math.inf
    knots = np.empty(ell + 2, dtype=np.int64)
    knots[0] = 1
    knots[1:ell + 1] = tau
    knots[ell + 1] = T
    return float(K.log_prior_tau(knots, int(ell), int(T)))


def log_prior_ell(ell: int, T: int, cfg: PriorConfig) -> float:
    """Unnormalized log prior mass of ``ell`` change-points."""
    L = cfg.max_changepoints(T)
    if not 0 <= ell <= L:
        raise DomainError(f"ell={ell} outside 0..{L}")
    fpar, ipar = cfg.packed(T)
    return float(K.log_prior_ell(int(ell), int(T), fpar, ipar))


def normalized_ell_prior(T: int, cfg: PriorConfig) -> np.ndarray:
    """Prior pmf of the number of change-points over 0..L."""
    L = cfg.max_changepoints(T)
    logp = np.array([log_prior_ell(k, T, cfg) for k in range(L + 1)])
    logp -= logp[np.isfinite(logp)].max()
    p = np.exp(logp)
    return p / p.sum()


def check_exponential_decrease(cfg: PriorConfig, T: int, ell_star: int, C: float = 1.0):
    """Check ``P(l) <= D * P(l - 1)`` with some ``D < 1`` for every ``C * ell_star < l <= L``.

    Returns ``(holds, max_ratio)``; ``max_ratio`` is the smallest admissible
    D (None when the range is empty, which holds vacuously).
    """
    L = cfg.max_changepoints(T)
    lo = math.floor(C * ell_star) + 1
    ratios = [
        math.exp(log_prior_ell(k, T, cfg) - log_prior_ell(k - 1, T, cfg))
        for k in range(max(lo, 1), L + 1)
    ]
    if not ratios:
        return True, None
    worst = max(ratios)
    return worst < 1.0, worst
