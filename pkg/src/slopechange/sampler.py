"""Metropolis-Hastings sampler over (number, locations, means) of slope changes."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels as K
from .model import ChainState, ConfigError, Dataset, DomainError, SlopeChangeError
from .priors import PriorConfig
from .variance import (
    FIXED_FREE,
    FIXED_SHARED,
    GIBBS_FREE,
    GIBBS_SHARED,
    VarianceConfig,
    estimate_variance_free,
    estimate_variance_shared,
)

MAX_INIT_TRIES = 10


class SamplerError(SlopeChangeError):
    category = "sampler-error"


@dataclass
class MoveTunables:
    c: float = 0.05
    d1: int = 1
    d2: int | None = None

    def window_single(self, T: int) -> int:
        return max(1, T // 20) if self.d2 is None else int(self.d2)

    def validate(self):
        if not self.c > 0:
            raise ConfigError(f"c must be positive, got {self.c}")
        if self.d1 < 1 or (self.d2 is not None and self.d2 < 1):
            raise ConfigError("d1 and d2 must be positive integers")
        return self


@dataclass
class SamplerConfig:
    prior: PriorConfig = field(default_factory=PriorConfig)
    variance: VarianceConfig = field(default_factory=VarianceConfig)
    moves: MoveTunables = field(default_factory=MoveTunables)
    n_iter: int = 70000
    burn_in: int = 20000
    thin: int = 10
    warm_start: int = 30000
    use_likelihood: bool = True

    def validate(self, T: int | None = None):
        self.prior.validate(T)
        self.variance.validate()
        self.moves.validate()
        if self.n_iter < 1 or self.burn_in < 0 or self.thin < 1 or self.warm_start < 0:
            raise ConfigError("iteration counts must satisfy n_iter >= 1, burn_in >= 0, thin >= 1, warm_start >= 0")
        if self.burn_in >= self.n_iter:
            raise ConfigError(f"burn_in ({self.burn_in}) must be smaller than n_iter ({self.n_iter})")
        return self

    def packed(self, T: int):
        fpar, ipar = self.prior.packed(T)
        fpar[K.F_C] = self.moves.c
        fpar[K.F_ALPHA0] = self.variance.alpha0
        fpar[K.F_BETA0] = self.variance.beta0
        ipar[K.I_D1] = self.moves.d1
        ipar[K.I_D2] = self.moves.window_single(T)
        ipar[K.I_USE_LIK] = 1 if self.use_likelihood else 0
        ipar[K.I_VAR_MODE] = {
            GIBBS_FREE: K.VAR_GIBBS_FREE,
            GIBBS_SHARED: K.VAR_GIBBS_SHARED,
        }.get(self.variance.mode, K.VAR_FIXED)
        return fpar, ipar


@dataclass
class Trace:
    """Thinned post-burn-in record of one chain.

    Record ``i`` stores its knots ``[1, tau..., T]`` and the means at those
    knots in ``knots_flat`` / ``theta_flat`` starting at ``ptr[i]``.
    """

    n_times: int
    iters: np.ndarray
    ell: np.ndarray
    log_posterior: np.ndarray
    accept: np.ndarray
    ptr: np.ndarray
    knots_flat: np.ndarray
    theta_flat: np.ndarray
    n_iter: int = 0
    burn_in: int = 0
    thin: int = 1
    move_counts: np.ndarray | None = None
    final_state: ChainState | None = None
    final_sigma2: np.ndarray | None = None

    def __len__(self):
        return self.iters.shape[0]

    def tau(self, i: int) -> np.ndarray:
        p = self.ptr[i]
        return self.knots_flat[p + 1:p + 1 + self.ell[i]]

    def knots(self, i: int) -> np.ndarray:
        p = self.ptr[i]
        return self.knots_flat[p:p + self.ell[i] + 2]

    def theta_knots(self, i: int) -> np.ndarray:
        p = self.ptr[i]
        return self.theta_flat[p:p + self.ell[i] + 2]

    def mean_curves(self) -> np.ndarray:
        """Piecewise linear mean of every record, shape (len, T)."""
        grid = np.arange(1, self.n_times + 1)
        out = np.empty((len(self), self.n_times))
        for i in range(len(self)):
            out[i] = np.interp(grid, self.knots(i), self.theta_knots(i))
        return out

    def acceptance_rates(self) -> dict:
        names = ("birth", "death", "theta", "shift_joint", "shift_single")
        mc = self.move_counts
        if mc is None:
            return {}
        return {name: (float(mc[k, 1] / mc[k, 0]) if mc[k, 0] else None) for k, name in enumerate(names)}


class MoveResult(NamedTuple):
    state: ChainState
    proposal: ChainState | None
    accepted: bool
    log_ratio: float
    kind: str


def p_add(ell: int, L: int) -> float:
    """Probability of proposing a birth from a state with ``ell`` change-points."""
    if not 0 <= ell <= L:
        raise DomainError(f"ell={ell} outside 0..{L}")
    return float(K.p_add(int(ell), int(L)))


# ---------------------------------------------------------------------------
# single-move wrappers (used by tests and diagnostics; the driver calls the kernels directly)
# ---------------------------------------------------------------------------


class _Ctx:
    def __init__(self, state, x_n, sigma2_n, cfg: SamplerConfig):
        x = np.asarray(x_n, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        self.T, self.R = x.shape
        if state.n_times != self.T:
            raise DomainError("state and data disagree on T")
        self.xbar = x.mean(axis=1)
        self.ss = ((x - self.xbar[:, None]) ** 2).sum(axis=1)
        self.s2 = np.asarray(sigma2_n, dtype=np.float64).copy()
        if cfg.prior.mu0 is None:
            raise ConfigError("cfg.prior.mu0 must be set")
        self.mu0 = np.asarray(cfg.prior.mu0, dtype=np.float64)
        self.fpar, self.ipar = cfg.packed(self.T)
        self.L = int(self.ipar[K.I_L])
        self.theta = state.theta.copy()
        self.knots = state.knots(self.L + 3)
        self.ell = state.ell
        self.cache = np.zeros(3)
        K.refresh_cache(self.theta, self.knots, self.ell, self.xbar, self.ss, self.R, self.s2,
                        self.mu0, self.fpar, self.ipar, self.cache)
        self.prop_knots = np.zeros(self.L + 3, dtype=np.int64)
        self.prop_theta = np.zeros(self.T)

    def state(self, ell=None, knots=None, theta=None):
        ell = self.ell if ell is None else ell
        knots = self.knots if knots is None else knots
        theta = self.theta if theta is None else theta
        return ChainState(ell, knots[1:ell + 1].copy(), theta.copy())


def move1_birth_death(state, x_n, sigma2_n, cfg: SamplerConfig, rng) -> MoveResult:
    ctx = _Ctx(state, x_n, sigma2_n, cfg)
    ell, kind, acc, log_alpha = K.move_birth_death(
        ctx.theta, ctx.knots, ctx.ell, ctx.T, ctx.xbar, ctx.ss, ctx.R, ctx.s2,
        ctx.fpar, ctx.ipar, ctx.prop_knots, ctx.cache, rng)
    name = {1: "birth", -1: "death", 0: "none"}[int(kind)]
    proposal = None
    if np.isfinite(log_alpha) or acc:
        prop_ell = state.ell + int(kind)
        proposal = ctx.state(prop_ell, ctx.prop_knots)
    ctx.ell = ell
    return MoveResult(ctx.state(), proposal, bool(acc), float(log_alpha), name)


def move1_log_ratio(state, proposal, x_n, sigma2_n, cfg: SamplerConfig) -> float:
    """Log acceptance ratio of the specific birth or death ``state -> proposal``.

    Same arithmetic as the move itself; a death is the exact negative of
    the birth that reverses it.
    """
    ctx = _Ctx(state, x_n, sigma2_n, cfg)
    if abs(proposal.ell - state.ell) != 1 or not np.array_equal(state.theta, proposal.theta):
        raise DomainError("not a birth/death pair")
    small, big = (state, proposal) if proposal.ell > state.ell else (proposal, state)
    new = np.setdiff1d(big.tau, small.tau)
    if new.size != 1 or not np.array_equal(np.setdiff1d(big.tau, new), small.tau):
        raise DomainError("not a birth/death pair")
    t = int(new[0])
    kb = big.knots()
    i = int(np.searchsorted(kb, t))
    a, b = int(kb[i - 1]), int(kb[i + 1])
    dlik = 0.0
    if cfg.use_likelihood:
        th = state.theta
        dlik = (K.seg_quad(ctx.xbar, ctx.ss, ctx.R, ctx.s2, th, a, t)
                + K.seg_quad(ctx.xbar, ctx.ss, ctx.R, ctx.s2, th, t, b)
                - K.seg_quad(ctx.xbar, ctx.ss, ctx.R, ctx.s2, th, a, b))
    lb = K.birth_log_alpha(dlik, K.log_prior_tau(kb, big.ell, ctx.T), K.log_prior_tau(small.knots(), small.ell, ctx.T),
                           small.ell, ctx.T, b - a, ctx.fpar, ctx.ipar)
    return float(lb if proposal.ell > state.ell else -lb)


def move2_theta_walk(state, x_n, sigma2_n, cfg: SamplerConfig, rng) -> MoveResult:
    ctx = _Ctx(state, x_n, sigma2_n, cfg)
    acc, log_alpha = K.move_theta(ctx.theta, ctx.knots, ctx.ell, ctx.xbar, ctx.ss, ctx.R, ctx.s2,
                                  ctx.mu0, ctx.fpar, ctx.ipar, ctx.prop_theta, ctx.cache, rng)
    proposal = ctx.state(theta=ctx.prop_theta)
    return MoveResult(ctx.state(), proposal, bool(acc), float(log_alpha), "theta")


def move3a_joint_shift(state, x_n, sigma2_n, cfg: SamplerConfig, rng) -> MoveResult:
    ctx = _Ctx(state, x_n, sigma2_n, cfg)
    acc, log_alpha = K.move_shift_joint(ctx.theta, ctx.knots, ctx.ell, ctx.T, ctx.xbar, ctx.ss, ctx.R,
                                        ctx.s2, ctx.fpar, ctx.ipar, ctx.prop_knots, ctx.cache, rng)
    proposal = ctx.state(knots=ctx.prop_knots) if ctx.ell else state.copy()
    return MoveResult(ctx.state(), proposal, bool(acc), float(log_alpha), "shift_joint")


def move3b_single_shift(state, x_n, sigma2_n, cfg: SamplerConfig, rng) -> MoveResult:
    ctx = _Ctx(state, x_n, sigma2_n, cfg)
    acc, log_alpha = K.move_shift_single(ctx.theta, ctx.knots, ctx.ell, ctx.T, ctx.xbar, ctx.ss, ctx.R,
                                         ctx.s2, ctx.fpar, ctx.ipar, ctx.prop_knots, ctx.cache, rng)
    proposal = ctx.state(knots=ctx.prop_knots) if ctx.ell else state.copy()
    return MoveResult(ctx.state(), proposal, bool(acc), float(log_alpha), "shift_single")


def move4_refresh_inactive(state, sigma2_n, cfg: SamplerConfig, rng) -> ChainState:
    T = state.n_times
    theta = state.theta.copy()
    cache = np.zeros(3)
    K.move_refresh_inactive(theta, state.knots(), state.ell, np.asarray(sigma2_n, dtype=np.float64),
                            np.asarray(cfg.prior.mu0, dtype=np.float64), cfg.prior.nu0,
                            np.zeros(T, dtype=np.bool_), cache, rng)
    return ChainState(state.ell, state.tau.copy(), theta)


def log_posterior(state, x_n, sigma2_n, cfg: SamplerConfig) -> float:
    """Unnormalized log posterior used for the recorded trace values."""
    ctx = _Ctx(state, x_n, sigma2_n, cfg)
    return float(K.log_posterior(ctx.knots, ctx.ell, ctx.T, ctx.fpar, ctx.ipar, ctx.cache))


# ---------------------------------------------------------------------------
# initialization and drivers
# ---------------------------------------------------------------------------


def initial_theta(x_n, mu0, nu0: float) -> np.ndarray:
    """Per-time conjugate posterior mean of theta, ignoring the change-points."""
    x = np.asarray(x_n, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    R = x.shape[1]
    return (nu0 * np.asarray(mu0, dtype=np.float64) + R * x.mean(axis=1)) / (nu0 + R)


def init_state(x_n, sigma2_n, cfg: SamplerConfig, rng, mu0=None) -> ChainState:
    """One uniformly placed change-point and theta at its conjugate posterior mean."""
    x = np.asarray(x_n, dtype=np.float64)
    T = x.shape[0]
    mu0 = cfg.prior.mu0 if mu0 is None else mu0
    L = cfg.prior.max_changepoints(T)
    theta = initial_theta(x, mu0, cfg.prior.nu0)
    if L == 0:
        return ChainState(0, [], theta)
    return ChainState(1, [int(rng.integers(2, T))], theta)


def _checked_init(x_n, sigma2_n, cfg, rng, mu0):
    run_cfg = cfg
    if cfg.prior.mu0 is None:
        run_cfg = _with_mu0(cfg, mu0)
    for _ in range(MAX_INIT_TRIES):
        state = init_state(x_n, sigma2_n, run_cfg, rng, mu0)
        lp = log_posterior(state, x_n, sigma2_n, run_cfg)
        if np.isfinite(lp):
            return state
    raise SamplerError(f"could not find an initial state with finite log posterior in {MAX_INIT_TRIES} tries")


def _with_mu0(cfg, mu0):
    prior = PriorConfig(**{**cfg.prior.__dict__, "mu0": np.asarray(mu0, dtype=np.float64)})
    return SamplerConfig(prior, cfg.variance, cfg.moves, cfg.n_iter, cfg.burn_in, cfg.thin,
                         cfg.warm_start, cfg.use_likelihood)


def _split_traces(out, T, n_iter, burn_in, thin, s2, theta, knots, ells):
    rec_iter, rec_ell, rec_lp, rec_flags, rec_ptr, knot_buf, theta_buf, counts = out
    traces = []
    for n in range(rec_ell.shape[1]):
        ell = rec_ell[:, n]
        starts = rec_ptr[:, n]
        lens = ell + 2
        idx = np.concatenate([np.arange(s, s + k) for s, k in zip(starts, lens)]) if len(ell) else np.zeros(0, int)
        ptr = np.concatenate(([0], np.cumsum(lens)[:-1])).astype(np.int64) if len(ell) else np.zeros(0, np.int64)
        final = ChainState(int(ells[n]), knots[n, 1:ells[n] + 1].copy(), theta[n].copy())
        traces.append(Trace(
            n_times=T, iters=rec_iter.copy(), ell=ell.copy(), log_posterior=rec_lp[:, n].copy(),
            accept=rec_flags[:, n, :].copy(), ptr=ptr, knots_flat=knot_buf[idx], theta_flat=theta_buf[idx],
            n_iter=n_iter, burn_in=burn_in, thin=thin, move_counts=counts[n].copy(),
            final_state=final, final_sigma2=s2[n].copy()))
    return traces


def _drive(xbar, ss, R, s2, mu0, cfg, states, n_iter, burn_in, thin, rng, mode_override=None):
    N, T = xbar.shape
    fpar, ipar = cfg.packed(T)
    if mode_override is not None:
        ipar[K.I_VAR_MODE] = mode_override
    L = int(ipar[K.I_L])
    theta = np.stack([s.theta for s in states]).astype(np.float64)
    knots = np.stack([s.knots(L + 3) for s in states])
    ells = np.array([s.ell for s in states], dtype=np.int64)
    out = K.run_chains(xbar, ss, R, s2, mu0, fpar, ipar, theta, knots, ells,
                       int(n_iter), int(burn_in), int(thin), rng)
    return out, theta, knots, ells


def plugin_variance(x_n, mu0, cfg: SamplerConfig) -> np.ndarray:
    """Free plug-in variance of one series (used to seed the Gibbs variance modes)."""
    x = np.asarray(x_n, dtype=np.float64)
    ds = Dataset(x[None, :, :] if x.ndim == 2 else x[None, :, None])
    vcfg = VarianceConfig(cfg.variance.alpha0, cfg.variance.beta0, FIXED_FREE)
    if not vcfg.alpha0 + ds.n_reps / 2 > 1:
        raise ConfigError("the warm-start plug-in variance needs alpha0 + R/2 > 1")
    return estimate_variance_free(ds, vcfg, mu0=mu0, nu0=cfg.prior.nu0)[0]


def run_series(x_n, cfg: SamplerConfig, rng, sigma2_n=None, mu0=None, init: ChainState | None = None) -> Trace:
    """Run one chain on a (T, R) series.

    ``sigma2_n`` is required for the fixed-variance modes. For the Gibbs
    free-variance mode it is the starting point (default: the free plug-in
    estimate) and a fixed-variance warm-start chain of ``cfg.warm_start``
    iterations runs before the recorded chain.
    """
    x = np.asarray(x_n, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    T, R = x.shape
    mu0 = cfg.prior.mu0 if mu0 is None else mu0
    if mu0 is None:
        raise ConfigError("a prior mean mu0 is required (defaults come from the whole dataset)")
    mu0 = np.asarray(mu0, dtype=np.float64)
    cfg.validate(T)
    mode = cfg.variance.mode
    if mode == GIBBS_SHARED:
        raise ConfigError("the shared Gibbs variance couples series; use run_joint")
    if sigma2_n is None:
        if mode != GIBBS_FREE:
            raise ConfigError("fixed-variance sampling needs sigma2_n")
        sigma2_n = plugin_variance(x, mu0, cfg)
    s2 = np.array(sigma2_n, dtype=np.float64).reshape(1, T)
    if not np.all(s2 > 0):
        raise DomainError("variances must be strictly positive")
    xbar = x.mean(axis=1)[None, :]
    ss = ((x - xbar[0][:, None]) ** 2).sum(axis=1)[None, :]

    state = init if init is not None else _checked_init(x, s2[0], cfg, rng, mu0)
    if mode == GIBBS_FREE and cfg.warm_start > 0 and init is None:
        _, theta, knots, ells = _drive(xbar, ss, R, s2, mu0, cfg, [state], cfg.warm_start,
                                       cfg.warm_start, 1, rng, mode_override=K.VAR_FIXED)
        state = ChainState(int(ells[0]), knots[0, 1:ells[0] + 1], theta[0])
    out, theta, knots, ells = _drive(xbar, ss, R, s2, mu0, cfg, [state], cfg.n_iter, cfg.burn_in, cfg.thin, rng)
    return _split_traces(out, T, cfg.n_iter, cfg.burn_in, cfg.thin, s2, theta, knots, ells)[0]


def run_joint(dataset: Dataset, cfg: SamplerConfig, rng, mu0=None) -> list[Trace]:
    """Shared-Gibbs-variance sampler: all series sweep in lockstep.

    The common variance is redrawn after every complete sweep, so no series
    starts sweep m + 1 before the variance of sweep m is known.
    """
    if cfg.variance.mode != GIBBS_SHARED:
        raise ConfigError("run_joint is only for the shared Gibbs variance mode")
    warnings.warn("the shared Gibbs variance sampler (s4) is experimental", stacklevel=2)
    T = dataset.n_times
    cfg.validate(T)
    mu0 = dataset.grand_mean() if mu0 is None and cfg.prior.mu0 is None else (cfg.prior.mu0 if mu0 is None else mu0)
    mu0 = np.asarray(mu0, dtype=np.float64)
    shared_cfg = VarianceConfig(cfg.variance.alpha0, cfg.variance.beta0, FIXED_SHARED)
    s2 = estimate_variance_shared(dataset, shared_cfg, mu0=mu0, nu0=cfg.prior.nu0)
    xbar, ss = dataset.sufficient_stats()
    states = [_checked_init(dataset.values[n], s2[n], cfg, rng, mu0) for n in range(dataset.n_series)]
    out, theta, knots, ells = _drive(xbar, ss, dataset.n_reps, s2, mu0, cfg, states,
                                     cfg.n_iter, cfg.burn_in, cfg.thin, rng)
    return _split_traces(out, T, cfg.n_iter, cfg.burn_in, cfg.thin, s2, theta, knots, ells)
