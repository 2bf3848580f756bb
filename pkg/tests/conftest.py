"""Shared fixtures and independent reference implementations.

The reference functions here are written from the model definition with
scipy densities and explicit loops; they never call the package kernels.
"""

import math

import numpy as np
import pytest
from scipy import stats

from slopechange.model import ChainState
from slopechange.priors import PriorConfig
from slopechange.sampler import MoveTunables, SamplerConfig


def ref_mean(theta, tau, T):
    knots = [1, *[int(t) for t in tau], T]
    return np.interp(np.arange(1, T + 1), knots, [theta[k - 1] for k in knots])


def ref_loglik(x, theta, tau, s2):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0]
    mu = ref_mean(theta, tau, T)
    return float(sum(stats.norm.logpdf(x[t, r], mu[t], math.sqrt(s2[t]))
                     for t in range(T) for r in range(x.shape[1])))


def ref_log_prior_theta(theta, mu0, s2, nu0):
    return float(np.sum(stats.norm.logpdf(theta, mu0, np.sqrt(np.asarray(s2) / nu0))))


def ref_log_prior_tau(tau, T):
    ell = len(tau)
    if ell == 0:
        return 0.0
    prev = 1
    for t in tau:
        if not prev < t < T:
            return -math.inf
        prev = t
    p = 1.0 / (T - ell - 1)
    for j in range(2, ell + 1):
        p *= 1.0 / (T - ell + j - tau[j - 2] - 1)
    return math.log(p)


def ref_log_prior_ell(ell, T, cfg):
    if cfg.ell_prior == "truncated_poisson":
        if ell > cfg.poisson_max:
            return -math.inf
        return float(stats.poisson.logpmf(ell, cfg.poisson_lambda))
    if ell == 0:
        return 0.0
    return -cfg.alpha * ell * math.log(cfg.b * (T - 2) / ell)


def ref_log_posterior(x, theta, tau, s2, cfg, use_lik=True):
    T = len(theta)
    if ref_log_prior_tau(list(tau), T) == -math.inf:
        return -math.inf
    out = ref_log_prior_theta(theta, cfg.prior.mu0, s2, cfg.prior.nu0)
    out += ref_log_prior_tau(list(tau), T) + ref_log_prior_ell(len(tau), T, cfg.prior)
    if use_lik:
        out += ref_loglik(x, theta, tau, s2)
    return out


def ref_p_add(ell, L):
    if ell == 0:
        return 1.0
    return 0.0 if ell == L else 0.5


def random_instance(rng, T_max=20, R_max=3, ell_max=4, poisson=False):
    """A random small problem: data, variances, a valid state and a config."""
    T = int(rng.integers(5, T_max + 1))
    R = int(rng.integers(1, R_max + 1))
    L = int(rng.integers(1, T - 1))
    ell = int(rng.integers(0, min(ell_max, L) + 1))
    tau = np.sort(rng.choice(np.arange(2, T), size=ell, replace=False))
    x = rng.normal(0, 2, size=(T, R))
    s2 = rng.uniform(0.3, 3.0, size=T)
    mu0 = rng.normal(0, 1, size=T)
    theta = rng.normal(0, 1.5, size=T)
    prior = PriorConfig(
        nu0=float(rng.uniform(0.05, 1.0)), alpha=float(rng.uniform(0.5, 3.0)), b=float(rng.uniform(1.5, 6.0)),
        L=L, ell_prior="truncated_poisson" if poisson else "complexity",
        poisson_lambda=float(rng.uniform(0.5, 3.0)), poisson_max=int(rng.integers(L // 2, L + 3)), mu0=mu0)
    if poisson and ell > prior.poisson_max:
        prior.poisson_max = ell
    moves = MoveTunables(c=float(rng.uniform(0.01, 0.5)), d1=int(rng.integers(1, 3)), d2=int(rng.integers(1, 4)))
    cfg = SamplerConfig(prior=prior, moves=moves)
    return x, s2, ChainState(ell, tau, theta), cfg


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
