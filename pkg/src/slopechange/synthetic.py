"""Ground-truthed replicated series with piecewise linear means.

Each series draws a number of change-points, places them near an even grid
with binomial jitter, and builds a continuous mean that is flat up to the
first change and then follows slopes with Markov-switching signs. The
"noisy" kind additionally shifts every replicate's change times and
perturbs its knot levels, so replicates are no longer exchangeable; the
"exact" kind generates data exactly from the sampler's model.

Observation variances are Gamma(shape=1, rate=rate(t)) with a rate falling
linearly from 1 at t=1 to 0.1 at t=T, so the expected variance grows from
1 to 10 along the series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, Dataset, SlopeChangeError

NOISY = "noisy"
EXACT = "exact"
FREE_PER_SERIES = "free_per_series"
SHARED_ACROSS_SERIES = "shared_across_series"


class SimulationError(SlopeChangeError):
    category = "simulation-error"


@dataclass
class SimScenario:
    T: int = 200
    N: int = 30
    R: int = 3
    ell_range: list[int] = field(default_factory=lambda: list(range(10)))
    noise_kind: str = NOISY
    variance_kind: str = FREE_PER_SERIES
    jitter_trials: int = 100
    jitter_prob: float = 0.5
    # subtract the binomial mean from the location jitter so late change-points stay inside short series
    center_jitter: bool = True
    replicate_shift_mean: float = 2.0
    slope_sd: float = 0.3
    sign_flip_prob: float = 0.8
    endpoint_var: float = 1.0
    seed: int = 0
    max_retries: int = 1000

    def validate(self):
        if self.T < 3 or self.N < 1 or self.R < 1:
            raise ConfigError("need T >= 3, N >= 1, R >= 1")
        if not self.ell_range or min(self.ell_range) < 0 or max(self.ell_range) > self.T - 2:
            raise ConfigError(f"ell_range must be a non-empty subset of 0..{self.T - 2}")
        if self.noise_kind not in (NOISY, EXACT):
            raise ConfigError(f"unknown noise kind {self.noise_kind!r}")
        if self.variance_kind not in (FREE_PER_SERIES, SHARED_ACROSS_SERIES):
            raise ConfigError(f"unknown variance kind {self.variance_kind!r}")
        for p in (self.jitter_prob, self.sign_flip_prob):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability {p} outside [0, 1]")
        if self.slope_sd < 0 or self.endpoint_var < 0 or self.replicate_shift_mean < 0:
            raise ConfigError("slope_sd, endpoint_var and replicate_shift_mean must be non-negative")
        return self


@dataclass
class SeriesTruth:
    series_id: str
    ell: int
    tau: np.ndarray
    slopes: np.ndarray
    levels: np.ndarray
    n_times: int = 0

    def slope_changes(self) -> np.ndarray:
        """Absolute slope change at each change-point (the first phase is flat)."""
        s = np.concatenate(([0.0], self.slopes))
        return np.abs(np.diff(s))

    def segment_lengths(self) -> np.ndarray:
        return np.diff(np.concatenate(([1], self.tau, [self.n_times])))


@dataclass
class GroundTruth:
    series: list[SeriesTruth]
    sigma2: np.ndarray
    scenario: SimScenario


def variance_rate(t, T: int):
    """Gamma rate of the observation variance at 1-based time t."""
    return -0.9 * np.asarray(t, dtype=np.float64) / (T - 1) + (T - 0.1) / (T - 1)


def draw_variances(scenario: SimScenario, rng) -> np.ndarray:
    T, N = scenario.T, scenario.N
    scale = 1.0 / variance_rate(np.arange(1, T + 1), T)
    if scenario.variance_kind == SHARED_ACROSS_SERIES:
        return np.broadcast_to(rng.gamma(1.0, scale), (N, T)).copy()
    return rng.gamma(1.0, scale, size=(N, T))


def draw_locations(ell: int, scenario: SimScenario, rng) -> np.ndarray:
    grid = np.rint(scenario.T * np.arange(1, ell + 1) / (ell + 1)).astype(np.int64)
    y = rng.binomial(scenario.jitter_trials, scenario.jitter_prob, size=ell)
    if scenario.center_jitter:
        y = y - int(round(scenario.jitter_trials * scenario.jitter_prob))
    return grid + y


def draw_slopes(ell: int, scenario: SimScenario, rng) -> np.ndarray:
    if ell == 0:
        return np.zeros(0)
    signs = np.empty(ell)
    signs[0] = rng.choice([-1.0, 1.0])
    flips = rng.random(ell - 1) < scenario.sign_flip_prob
    for j in range(1, ell):
        signs[j] = -signs[j - 1] if flips[j - 1] else signs[j - 1]
    return signs * np.abs(rng.normal(0.0, scenario.slope_sd, size=ell))


def _valid(knots, T):
    return knots[0] == 1 and knots[-1] == T and np.all(np.diff(knots) > 0)


def simulate_series(ell: int, sigma2_n, scenario: SimScenario, rng, series_id="1"):
    """One (T, R) block and its truth; retries placements that leave (1, T)."""
    T, R = scenario.T, scenario.R
    grid = np.arange(1, T + 1)
    for _ in range(scenario.max_retries):
        tau = draw_locations(ell, scenario, rng)
        knots = np.concatenate(([1], tau, [T]))
        if not _valid(knots, T):
            continue
        slopes = draw_slopes(ell, scenario, rng)
        levels = np.zeros(ell + 2)
        if ell:
            levels[2:] = np.cumsum(slopes * np.diff(knots[1:]))
        values = np.empty((T, R))
        ok = True
        for r in range(R):
            if scenario.noise_kind == NOISY:
                shift = rng.choice([-1, 1], size=ell) * rng.poisson(scenario.replicate_shift_mean, size=ell)
                knots_r = np.concatenate(([1], tau + shift, [T]))
                levels_r = levels + rng.normal(0.0, np.sqrt(scenario.endpoint_var), size=ell + 2)
                if not _valid(knots_r, T):
                    ok = False
                    break
            else:
                knots_r, levels_r = knots, levels
            mean_r = np.interp(grid, knots_r, levels_r)
            values[:, r] = mean_r + np.sqrt(sigma2_n) * rng.standard_normal(T)
        if ok:
            return values, SeriesTruth(series_id, ell, tau, slopes, levels, T)
    raise SimulationError(
        f"series {series_id}: no valid placement of {ell} change-points in T={scenario.T} after {scenario.max_retries} tries")


def simulate_dataset(scenario: SimScenario) -> tuple[Dataset, GroundTruth]:
    """Draw a dataset; the same seed always yields the same values."""
    scenario.validate()
    root = np.random.SeedSequence(scenario.seed)
    var_seq, *series_seqs = root.spawn(scenario.N + 1)
    sigma2 = draw_variances(scenario, np.random.default_rng(var_seq))
    ell_choices = np.asarray(sorted(set(scenario.ell_range)))
    values = np.empty((scenario.N, scenario.T, scenario.R))
    truths = []
    for n, seq in enumerate(series_seqs):
        rng = np.random.default_rng(seq)
        ell = int(rng.choice(ell_choices))
        values[n], truth = simulate_series(ell, sigma2[n], scenario, rng, series_id=str(n + 1))
        truths.append(truth)
    ids = [t.series_id for t in truths]
    return Dataset(values, series_ids=ids), GroundTruth(truths, sigma2, scenario)
