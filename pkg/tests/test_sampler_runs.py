import warnings

import numpy as np
import pytest

from conftest import ref_log_posterior
from slopechange.model import ConfigError, Dataset
from slopechange.priors import PriorConfig, normalized_ell_prior
from slopechange.sampler import SamplerConfig, run_joint, run_series
from slopechange.synthetic import EXACT, SHARED_ACROSS_SERIES, SimScenario, simulate_series, draw_variances
from slopechange.variance import GIBBS_FREE, GIBBS_SHARED, VarianceConfig


def _prior_only(T, prior, n_iter, burn_in, seed=1):
    cfg = SamplerConfig(prior=prior, n_iter=n_iter, burn_in=burn_in, thin=1, use_likelihood=False)
    tr = run_series(np.zeros((T, 1)), cfg, np.random.default_rng(seed), sigma2_n=np.ones(T))
    L = prior.max_changepoints(T)
    emp = np.bincount(tr.ell, minlength=L + 1) / len(tr)
    return 0.5 * np.abs(emp - normalized_ell_prior(T, prior)).sum()


@pytest.mark.parametrize("prior", [
    PriorConfig(alpha=0.5, b=1.5, L=8),
    PriorConfig(ell_prior="truncated_poisson", poisson_lambda=2.0, poisson_max=8),
    PriorConfig(ell_prior="truncated_poisson", poisson_lambda=1.0, poisson_max=30),
])
def test_prior_only_chain_samples_count_prior(prior):
    T = 20
    prior.mu0 = np.zeros(T)
    assert _prior_only(T, prior, 200_000, 5_000) < 0.02


def test_prior_only_locations_follow_location_prior():
    # with one change-point allowed the location prior is uniform on 2..T-1
    T = 10
    prior = PriorConfig(ell_prior="truncated_poisson", poisson_lambda=1.0, poisson_max=1, L=1, mu0=np.zeros(T))
    cfg = SamplerConfig(prior=prior, n_iter=80_000, burn_in=1_000, thin=1, use_likelihood=False)
    tr = run_series(np.zeros((T, 1)), cfg, np.random.default_rng(3), sigma2_n=np.ones(T))
    locs = np.array([tr.tau(i)[0] for i in range(len(tr)) if tr.ell[i] == 1])
    freq = np.bincount(locs, minlength=T)[2:T] / locs.size
    assert np.abs(freq - 1 / (T - 2)).max() < 0.02


def _series(seed, ell, T=120, slope_sd=0.3):
    sc = SimScenario(T=T, N=1, R=3, noise_kind=EXACT, variance_kind=SHARED_ACROSS_SERIES, seed=seed, slope_sd=slope_sd)
    rng = np.random.default_rng(seed)
    s2 = draw_variances(sc, rng)[0]
    x, truth = simulate_series(ell, s2, sc, rng)
    return x, s2, truth


def _cfg(T, mu0, **kw):
    base = dict(n_iter=20_000, burn_in=5_000, thin=10)
    base.update(kw)
    return SamplerConfig(prior=PriorConfig(mu0=mu0), **base)


def test_same_seed_same_trace():
    x, s2, _ = _series(0, 2)
    cfg = _cfg(120, x.mean(1), n_iter=5_000, burn_in=1_000)
    a = run_series(x, cfg, np.random.default_rng(5), sigma2_n=s2)
    b = run_series(x, cfg, np.random.default_rng(5), sigma2_n=s2)
    for f in ("iters", "ell", "log_posterior", "accept", "knots_flat", "theta_flat"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    c = run_series(x, cfg, np.random.default_rng(6), sigma2_n=s2)
    assert not np.array_equal(a.log_posterior, c.log_posterior)


def test_recorded_iterations_and_states():
    x, s2, _ = _series(1, 3)
    cfg = _cfg(120, x.mean(1), n_iter=3_000, burn_in=1_000, thin=7)
    tr = run_series(x, cfg, np.random.default_rng(0), sigma2_n=s2)
    want = [m for m in range(1, 3_001) if m > 1_000 and m % 7 == 0]
    np.testing.assert_array_equal(tr.iters, want)
    for i in range(len(tr)):
        k = tr.knots(i)
        assert k[0] == 1 and k[-1] == 120 and np.all(np.diff(k) > 0) and len(k) == tr.ell[i] + 2
    assert set(np.unique(tr.accept[:, 3])) <= {0, 1}


def test_recorded_log_posterior_is_full_posterior():
    x, s2, _ = _series(2, 2, T=40)
    cfg = _cfg(40, x.mean(1), n_iter=4_000, burn_in=1_000, thin=10)
    tr = run_series(x, cfg, np.random.default_rng(1), sigma2_n=s2)
    fs = tr.final_state
    want = ref_log_posterior(x, fs.theta, list(fs.tau), s2, cfg)
    assert tr.iters[-1] == 4_000
    assert tr.log_posterior[-1] == pytest.approx(want, abs=1e-8)


def test_recovers_three_change_points():
    # exact-scenario series with three changes, each a slope change of at least 0.1
    x, s2, truth = _series(11, 3, T=200)
    assert truth.slope_changes().min() >= 0.1
    tr = run_series(x, SamplerConfig(prior=PriorConfig(mu0=x.mean(1))), np.random.default_rng(0), sigma2_n=s2)
    assert int(np.argmax(np.bincount(tr.ell))) == 3


def test_result_does_not_depend_on_initial_location():
    x, s2, truth = _series(11, 3, T=200)
    from slopechange.model import ChainState
    from slopechange.sampler import initial_theta
    mu0 = x.mean(1)
    cfg = SamplerConfig(prior=PriorConfig(mu0=mu0))
    th = initial_theta(x, mu0, 0.1)
    posts = []
    for tau in (3, 190):
        tr = run_series(x, cfg, np.random.default_rng(tau), sigma2_n=s2, init=ChainState(1, [tau], th))
        posts.append(np.bincount(tr.ell, minlength=30)[:30] / len(tr))
    assert 0.5 * np.abs(posts[0] - posts[1]).sum() < 0.05


def test_gibbs_free_variance_runs_after_warm_start():
    x, s2, truth = _series(11, 3, T=200)
    cfg = SamplerConfig(prior=PriorConfig(mu0=x.mean(1)), variance=VarianceConfig(mode=GIBBS_FREE),
                        n_iter=20_000, burn_in=5_000, warm_start=10_000)
    tr = run_series(x, cfg, np.random.default_rng(0))
    assert int(np.argmax(np.bincount(tr.ell))) == 3
    assert not np.allclose(tr.final_sigma2, s2)
    assert np.all(tr.final_sigma2 > 0)


def test_shared_gibbs_variance_runs_in_lockstep():
    rng = np.random.default_rng(0)
    vals = np.stack([_series(s, 1, T=40)[0] for s in range(3)])
    ds = Dataset(vals)
    cfg = SamplerConfig(variance=VarianceConfig(mode=GIBBS_SHARED), n_iter=2_000, burn_in=500)
    with pytest.warns(UserWarning, match="experimental"):
        trs = run_joint(ds, cfg, rng)
    assert len(trs) == 3
    for tr in trs[1:]:
        np.testing.assert_array_equal(tr.final_sigma2, trs[0].final_sigma2)
        np.testing.assert_array_equal(tr.iters, trs[0].iters)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = run_joint(ds, cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(again[2].log_posterior, trs[2].log_posterior)


def test_config_errors():
    x = np.zeros((10, 2))
    with pytest.raises(ConfigError):
        run_series(x, SamplerConfig(), np.random.default_rng(0), sigma2_n=np.ones(10))
    with pytest.raises(ConfigError):
        run_series(x, SamplerConfig(prior=PriorConfig(mu0=np.zeros(10)), burn_in=10, n_iter=5),
                   np.random.default_rng(0), sigma2_n=np.ones(10))
    with pytest.raises(ConfigError):
        run_series(x, SamplerConfig(prior=PriorConfig(mu0=np.zeros(10))), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        run_series(x, SamplerConfig(prior=PriorConfig(mu0=np.zeros(10)), variance=VarianceConfig(mode=GIBBS_SHARED)),
                   np.random.default_rng(0), sigma2_n=np.ones(10))


def test_no_change_points_allowed():
    T = 10
    cfg = SamplerConfig(prior=PriorConfig(L=0, mu0=np.zeros(T)), n_iter=500, burn_in=100)
    tr = run_series(np.random.default_rng(0).normal(size=(T, 2)), cfg, np.random.default_rng(0), sigma2_n=np.ones(T))
    assert np.all(tr.ell == 0)
