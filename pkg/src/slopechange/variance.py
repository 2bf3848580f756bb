"""Observation variances: plug-in posterior means and Gibbs full conditionals.

Inverse-gamma parameterization used throughout: ``IG(shape, rate)`` is the
law of ``rate / G`` with ``G ~ Gamma(shape, scale=1)``; its mean is
``rate / (shape - 1)`` for ``shape > 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .model import ChainState, ConfigError, Dataset

FIXED_FREE = "fixed_free"
FIXED_SHARED = "fixed_shared"
GIBBS_FREE = "gibbs_free"
GIBBS_SHARED = "gibbs_shared"

SAMPLER_MODES = {"s1": FIXED_FREE, "s2": FIXED_SHARED, "s3": GIBBS_FREE, "s4": GIBBS_SHARED}


@dataclass
class VarianceConfig:
    alpha0: float = 1.0
    beta0: float = 1.0
    mode: str = FIXED_FREE

    def validate(self, n_series: int | None = None, n_reps: int | None = None):
        if self.mode not in (FIXED_FREE, FIXED_SHARED, GIBBS_FREE, GIBBS_SHARED):
            raise ConfigError(f"unknown variance mode {self.mode!r}")
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ConfigError("alpha0 and beta0 must be positive")
        if n_reps is not None:
            shape = self.alpha0 + n_reps / 2
            if self.mode == FIXED_SHARED and n_series is not None:
                shape = self.alpha0 + n_series * n_reps / 2
            if self.mode in (FIXED_FREE, FIXED_SHARED) and not shape > 1:
                raise ConfigError(
                    f"posterior mean of the variance does not exist: alpha0 + replicates/2 = {shape} <= 1")
        return self


def beta_hat(x_nt, mu0t: float, nu0: float) -> float:
    """Posterior sum-of-squares term of one (series, time) cell."""
    x = np.asarray(x_nt, dtype=np.float64)
    return float(_beta_hat(x[None, None, :], np.array([mu0t]), nu0)[0, 0])


def _beta_hat(values, mu0, nu0):
    # expanded closed form rearranged as SS/2 + nu0 R (xbar - mu0)^2 / (2 (R + nu0)); no cancellation
    R = values.shape[2]
    xbar = values.mean(axis=2)
    ss = ((values - xbar[:, :, None]) ** 2).sum(axis=2)
    return 0.5 * ss + nu0 * R * (xbar - mu0) ** 2 / (2 * (R + nu0))


def beta_hat_matrix(dataset: Dataset, mu0, nu0: float) -> np.ndarray:
    """``beta_hat`` for every (series, time) cell, shape (N, T)."""
    return _beta_hat(dataset.values, np.asarray(mu0, dtype=np.float64)[None, :], nu0)


def estimate_variance_free(dataset: Dataset, cfg: VarianceConfig, mu0=None, nu0: float = 0.1) -> np.ndarray:
    """Plug-in posterior mean of each sigma2_nt, shape (N, T)."""
    cfg.validate(dataset.n_series, dataset.n_reps)
    mu0 = dataset.grand_mean() if mu0 is None else mu0
    bh = beta_hat_matrix(dataset, mu0, nu0)
    return (cfg.beta0 + bh) / (cfg.alpha0 + dataset.n_reps / 2 - 1)


def estimate_variance_shared(dataset: Dataset, cfg: VarianceConfig, mu0=None, nu0: float = 0.1) -> np.ndarray:
    """Plug-in posterior mean of the common sigma2_t, broadcast to shape (N, T)."""
    shared_cfg = VarianceConfig(cfg.alpha0, cfg.beta0, FIXED_SHARED).validate(dataset.n_series, dataset.n_reps)
    mu0 = dataset.grand_mean() if mu0 is None else mu0
    bh = beta_hat_matrix(dataset, mu0, nu0)
    N, R = dataset.n_series, dataset.n_reps
    s2 = (shared_cfg.beta0 + bh.sum(axis=0)) / (shared_cfg.alpha0 + N * R / 2 - 1)
    return np.broadcast_to(s2, (N, dataset.n_times)).copy()


def _gibbs_rates(x_n, state: ChainState, mu0, nu0):
    x = np.asarray(x_n, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    xbar = x.mean(axis=1)
    ss = ((x - xbar[:, None]) ** 2).sum(axis=1)
    rates = np.zeros(x.shape[0])
    K.gibbs_rates(xbar, ss, x.shape[1], state.theta, state.knots(), state.ell,
                  np.asarray(mu0, dtype=np.float64), nu0, np.empty(x.shape[0]), rates)
    return rates, x.shape[1]


def gibbs_free_params(x_n, state: ChainState, mu0, nu0: float, cfg: VarianceConfig):
    """Shape (scalar) and per-time rates of the free-variance full conditional."""
    rates, R = _gibbs_rates(x_n, state, mu0, nu0)
    return 0.5 * (R + 1) + cfg.alpha0, rates + cfg.beta0


def gibbs_shared_params(values, states, mu0, nu0: float, cfg: VarianceConfig):
    """Shape and per-time rates of the shared-variance full conditional."""
    rates = None
    for x_n, state in zip(values, states):
        r, R = _gibbs_rates(x_n, state, mu0, nu0)
        rates = r if rates is None else rates + r
    return 0.5 * len(states) * (R + 1) + cfg.alpha0, rates + cfg.beta0


def gibbs_update_variance_free(x_n, state: ChainState, mu0, nu0: float, cfg: VarianceConfig,
                               rng: np.random.Generator) -> np.ndarray:
    """Draw sigma2_nt, t = 1..T, from their inverse-gamma full conditionals."""
    shape, rates = gibbs_free_params(x_n, state, mu0, nu0, cfg)
    out = np.empty_like(rates)
    K.draw_inverse_gamma(shape, rates, out, rng)
    return out


def gibbs_update_variance_shared(values, states, mu0, nu0: float, cfg: VarianceConfig,
                                 rng: np.random.Generator) -> np.ndarray:
    """Draw the common sigma2_t given the current states of all series."""
    shape, rates = gibbs_shared_params(values, states, mu0, nu0, cfg)
    out = np.empty_like(rates)
    K.draw_inverse_gamma(shape, rates, out, rng)
    return out
