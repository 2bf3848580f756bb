"""Fan series out to worker processes with one seeded stream per series."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import io as sio
from .model import ConfigError, Dataset
from .sampler import SamplerConfig, _with_mu0, run_joint, run_series
from .variance import FIXED_FREE, FIXED_SHARED, GIBBS_SHARED, estimate_variance_free, estimate_variance_shared

WORKERS_ENV = "SLOPECHANGE_WORKERS"


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer, got {n}")
    return n


def series_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Stream of series ``index``; identical to ``SeedSequence(master).spawn(N)[index]``."""
    return np.random.SeedSequence(master_seed, spawn_key=(index,))


def _one(args):
    x_n, cfg, seed, index, s2 = args
    return run_series(x_n, cfg, np.random.default_rng(series_seed(seed, index)), sigma2_n=s2)


def plugin_variances(dataset: Dataset, cfg: SamplerConfig, mu0) -> np.ndarray | None:
    mode = cfg.variance.mode
    if mode == FIXED_FREE:
        return estimate_variance_free(dataset, cfg.variance, mu0=mu0, nu0=cfg.prior.nu0)
    if mode == FIXED_SHARED:
        return estimate_variance_shared(dataset, cfg.variance, mu0=mu0, nu0=cfg.prior.nu0)
    return None


def run_dataset(dataset: Dataset, cfg: SamplerConfig, seed: int, sigma2=None, workers: int | None = None):
    """Run every series; returns one Trace per series in dataset order.

    Fixed-variance modes take ``sigma2`` (N, T) or compute the plug-in
    estimate. Results do not depend on ``workers``.
    """
    mu0 = dataset.grand_mean() if cfg.prior.mu0 is None else cfg.prior.mu0
    cfg = _with_mu0(cfg, mu0)
    cfg.validate(dataset.n_times)
    cfg.variance.validate(dataset.n_series, dataset.n_reps)
    mode = cfg.variance.mode
    if mode == GIBBS_SHARED:
        return run_joint(dataset, cfg, np.random.default_rng(np.random.SeedSequence(seed)), mu0=mu0)
    if sigma2 is None:
        sigma2 = plugin_variances(dataset, cfg, mu0)
    jobs = [(dataset.values[n], cfg, seed, n, None if sigma2 is None else sigma2[n])
            for n in range(dataset.n_series)]
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(jobs) == 1:
        return [_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_one, jobs))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def effective_config(cfg: SamplerConfig) -> dict:
    d = asdict(cfg)
    d["prior"].pop("mu0", None)
    return d


def run_to_directory(dataset: Dataset, cfg: SamplerConfig, seed: int, out_dir, sampler: str,
                     sigma2=None, workers: int | None = None, data_path=None, variance_path=None):
    """Write one trace pair per series plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traces = run_dataset(dataset, cfg, seed, sigma2=sigma2, workers=workers)
    series = []
    for n, (sid, tr) in enumerate(zip(dataset.series_ids, traces)):
        tp, hp = sio.write_trace(out, sid, tr)
        rates = tr.acceptance_rates()
        series.append({
            "series_id": sid,
            "seed_spawn_key": [n],
            "trace_file": tp.name,
            "trace_sha256": file_digest(tp),
            "theta_file": hp.name,
            "theta_sha256": file_digest(hp),
            "acceptance": rates,
        })
    conf = effective_config(cfg)
    conf["moves"]["d2_effective"] = cfg.moves.window_single(dataset.n_times)
    conf["prior"]["L_effective"] = cfg.prior.max_changepoints(dataset.n_times)
    manifest = {
        "version": __version__,
        "sampler": sampler,
        "master_seed": int(seed),
        "n_series": dataset.n_series,
        "n_times": dataset.n_times,
        "n_reps": dataset.n_reps,
        "config": conf,
        "data_file": None if data_path is None else str(data_path),
        "data_sha256": None if data_path is None else file_digest(data_path),
        "variance_file": None if variance_path is None else str(variance_path),
        "series": series,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return manifest


def traces_in(directory) -> list[str]:
    """Series ids with a trace file in ``directory``, in manifest order when there is one."""
    d = Path(directory)
    man = d / "manifest.json"
    if man.exists():
        with open(man, encoding="utf-8") as f:
            return [s["series_id"] for s in json.load(f)["series"]]
    return sorted(p.name[len("trace_"):-len(".csv")] for p in d.glob("trace_*.csv"))

