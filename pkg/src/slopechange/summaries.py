"""Posterior summaries of sampler traces and benchmark scoring."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .model import SlopeChangeError
from .sampler import Trace


class SummaryError(SlopeChangeError):
    category = "summary-error"


@dataclass
class LocationMarginal:
    """Empirical distribution of the j-th change-point given the MAP count."""

    index: int
    quantiles: dict
    support: list[int]
    counts: list[int]


@dataclass
class SeriesSummary:
    series_id: str
    n_records: int
    ell_posterior: list[float]
    ell_map: int
    location_marginals: list[LocationMarginal]
    z_probs: list[float]
    fitted_mean: list[float]
    fitted_band_lower: list[float]
    fitted_band_upper: list[float]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SeriesSummary:
        d = dict(d)
        d["location_marginals"] = [LocationMarginal(**m) for m in d["location_marginals"]]
        return cls(**d)


def ell_posterior(trace: Trace, L: int | None = None) -> np.ndarray:
    if len(trace) == 0:
        raise SummaryError("empty trace")
    L = trace.n_times - 2 if L is None else L
    counts = np.bincount(trace.ell, minlength=L + 1)
    return counts / counts.sum()


def map_ell(trace: Trace) -> int:
    """Most visited number of change-points; ties go to the smaller count."""
    if len(trace) == 0:
        raise SummaryError("empty trace")
    return int(np.argmax(np.bincount(trace.ell)))


def _conditioned(trace: Trace, ell_map: int) -> np.ndarray:
    rows = np.flatnonzero(trace.ell == ell_map)
    if rows.size == 0:
        raise SummaryError(f"no recorded state has ell={ell_map}")
    return rows


def conditional_taus(trace: Trace, ell_map: int) -> np.ndarray:
    """Change-point locations of every record with ``ell == ell_map``, shape (k, ell_map)."""
    rows = _conditioned(trace, ell_map)
    return np.array([trace.tau(i) for i in rows], dtype=np.int64).reshape(rows.size, ell_map)


def conditional_location_marginals(trace: Trace, ell_map: int) -> list[LocationMarginal]:
    taus = conditional_taus(trace, ell_map)
    out = []
    probs = (0.0, 0.25, 0.5, 0.75, 1.0)
    names = ("min", "q25", "median", "q75", "max")
    for j in range(ell_map):
        col = taus[:, j]
        q = np.quantile(col, probs)  # type-7 linear interpolation
        support, counts = np.unique(col, return_counts=True)
        out.append(LocationMarginal(
            index=j + 1,
            quantiles={k: float(v) for k, v in zip(names, q)},
            support=support.tolist(),
            counts=counts.tolist()))
    return out


def z_probabilities(trace: Trace, ell_map: int) -> np.ndarray:
    """Fraction of conditioned records with a change-point at each time-point."""
    taus = conditional_taus(trace, ell_map)
    counts = np.bincount(taus.ravel() - 1, minlength=trace.n_times)
    return counts / taus.shape[0]


def fitted_mean_band(trace: Trace, width: float = 2.0):
    """Posterior mean of the piecewise mean and ``mean -/+ width * sd`` bands."""
    if len(trace) == 0:
        raise SummaryError("empty trace")
    curves = trace.mean_curves()
    mean = curves.mean(axis=0)
    sd = curves.std(axis=0)
    return mean, mean - width * sd, mean + width * sd


def summarize(trace: Trace, series_id: str, L: int | None = None, width: float = 2.0) -> SeriesSummary:
    post = ell_posterior(trace, L)
    m = map_ell(trace)
    mean, lower, upper = fitted_mean_band(trace, width)
    return SeriesSummary(
        series_id=str(series_id),
        n_records=len(trace),
        ell_posterior=post.tolist(),
        ell_map=m,
        location_marginals=conditional_location_marginals(trace, m),
        z_probs=z_probabilities(trace, m).tolist(),
        fitted_mean=mean.tolist(),
        fitted_band_lower=lower.tolist(),
        fitted_band_upper=upper.tolist())


@dataclass
class BenchmarkScore:
    """MAE of the MAP count per true count, plus signed error histograms."""

    strata: list[int]
    n: list[int]
    mae: list[float]
    se: list[float | None]
    error_hist: dict

    def rows(self):
        return list(zip(self.strata, self.n, self.mae, self.se))


def score_benchmark(estimates: dict, truth: dict) -> BenchmarkScore:
    """Compare ``{series_id: ell_hat}`` against ``{series_id: ell_true}``."""
    if set(estimates) != set(truth):
        missing = sorted(set(truth) ^ set(estimates))
        raise SummaryError(f"series ids differ between estimates and truth: {missing[:5]}")
    ids = sorted(truth)
    true = np.array([truth[i] for i in ids])
    est = np.array([estimates[i] for i in ids])
    strata, n, mae, se, hist = [], [], [], [], {}
    for ell in np.unique(true):
        err = est[true == ell] - ell
        a = np.abs(err)
        strata.append(int(ell))
        n.append(int(a.size))
        mae.append(float(a.mean()))
        se.append(float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else None)
        vals, cnt = np.unique(err, return_counts=True)
        hist[int(ell)] = {int(v): int(c) for v, c in zip(vals, cnt)}
    return BenchmarkScore(strata, n, mae, se, hist)
