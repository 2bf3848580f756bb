"""Command line entry point: ``slopechange <subcommand> ...``.

Every failure prints one line ``error: <category>: <detail>`` to stderr and
exits with status 2.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from pathlib import Path

from . import io as sio
from . import runner
from .model import ConfigError, SlopeChangeError
from .priors import COMPLEXITY, TRUNCATED_POISSON, PriorConfig, check_exponential_decrease, normalized_ell_prior
from .sampler import MoveTunables, SamplerConfig
from .summaries import score_benchmark, summarize
from .synthetic import EXACT, FREE_PER_SERIES, NOISY, SHARED_ACROSS_SERIES, SimScenario, simulate_dataset
from .variance import SAMPLER_MODES, VarianceConfig, estimate_variance_free, estimate_variance_shared


def _int_list(text: str) -> list[int]:
    """``"0-5"`` or ``"0,2,4"``."""
    text = text.strip()
    try:
        if "-" in text and "," not in text:
            lo, hi = text.split("-")
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer range {text!r}") from None


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


class _Parser(argparse.ArgumentParser):
    """Usage errors become one-line config errors instead of a usage dump."""

    def error(self, message):
        raise ConfigError(message)


def _apply_config(parser: argparse.ArgumentParser, path):
    """Use a key=value file as parser defaults, so explicit flags still win."""
    if path is None:
        return
    values = sio.read_config(path)
    known = {a.dest for a in parser._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    parser.set_defaults(**values)


# ---------------------------------------------------------------------------
# shared option groups
# ---------------------------------------------------------------------------


def _add_prior_args(p):
    g = p.add_argument_group("priors")
    g.add_argument("--nu0", type=float, default=0.1)
    g.add_argument("--alpha", type=float, default=2.0)
    g.add_argument("--b", type=float, default=3.72)
    g.add_argument("--L", type=int, default=None, help="maximum number of change-points (default T-2)")
    g.add_argument("--ell-prior", choices=[COMPLEXITY, TRUNCATED_POISSON], default=COMPLEXITY)
    g.add_argument("--poisson-lambda", type=float, default=1.0)
    g.add_argument("--poisson-max", type=int, default=30)


def _add_variance_args(p):
    g = p.add_argument_group("variance prior")
    g.add_argument("--alpha0", type=float, default=1.0)
    g.add_argument("--beta0", type=float, default=1.0)


def _prior(a) -> PriorConfig:
    return PriorConfig(nu0=a.nu0, alpha=a.alpha, b=a.b, L=a.L, ell_prior=a.ell_prior,
                       poisson_lambda=a.poisson_lambda, poisson_max=a.poisson_max)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(a):
    sc = SimScenario(T=a.T, N=a.N, R=a.R, ell_range=a.ell_range, noise_kind=a.noise_kind,
                     variance_kind=a.variance_kind, jitter_trials=a.jitter_trials, jitter_prob=a.jitter_prob,
                     center_jitter=a.center_jitter, replicate_shift_mean=a.replicate_shift_mean,
                     slope_sd=a.slope_sd, sign_flip_prob=a.sign_flip_prob, endpoint_var=a.endpoint_var,
                     seed=a.seed, max_retries=a.max_retries)
    ds, truth = simulate_dataset(sc)
    sio.write_dataset(a.data, ds)
    sio.write_truth(a.truth, truth)
    if a.variances:
        shared = sc.variance_kind == SHARED_ACROSS_SERIES
        sio.write_variances(a.variances, truth.sigma2, ds.series_ids, shared=shared)
    sio.write_config(Path(a.truth).with_suffix(".scenario.cfg"), dict(sc.__dict__))
    print(f"wrote {ds.n_series} series (T={ds.n_times}, R={ds.n_reps}) to {a.data}")


def cmd_estimate_variance(a):
    ds = sio.load_dataset(a.data)
    cfg = VarianceConfig(a.alpha0, a.beta0)
    mu0 = ds.grand_mean()
    if a.mode == "free":
        s2 = estimate_variance_free(ds, cfg, mu0=mu0, nu0=a.nu0)
    else:
        s2 = estimate_variance_shared(ds, cfg, mu0=mu0, nu0=a.nu0)
    sio.write_variances(a.output, s2, ds.series_ids, shared=a.mode == "shared")
    print(f"wrote {a.mode} variances to {a.output}")


def _sampler_config(a) -> SamplerConfig:
    return SamplerConfig(
        prior=_prior(a),
        variance=VarianceConfig(a.alpha0, a.beta0, SAMPLER_MODES[a.sampler]),
        moves=MoveTunables(c=a.c, d1=a.d1, d2=a.d2),
        n_iter=a.n_iter, burn_in=a.burn_in, thin=a.thin, warm_start=a.warm_start,
        use_likelihood=not a.prior_only)


def cmd_run(a):
    ds = sio.load_dataset(a.data)
    cfg = _sampler_config(a)
    sigma2 = None
    if a.sampler in ("s1", "s2"):
        if a.variances:
            sigma2 = sio.load_variances(a.variances, ds)
        elif not a.fuse:
            raise ConfigError(f"sampler {a.sampler} needs --variances FILE (from estimate-variance) or --fuse")
    elif a.variances:
        raise ConfigError(f"sampler {a.sampler} updates the variances itself; drop --variances")
    if a.sampler == "s4":
        print("warning: sampler s4 (shared Gibbs variance) is experimental; series run in lockstep",
              file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        man = runner.run_to_directory(ds, cfg, a.seed, a.output, a.sampler, sigma2=sigma2,
                                      workers=a.workers, data_path=a.data, variance_path=a.variances)
    print(f"wrote {man['n_series']} traces to {a.output}")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_summarize(a):
    ids = runner.traces_in(a.traces)
    if not ids:
        raise ConfigError(f"no trace files in {a.traces}")
    plots = Path(a.plots) if a.plots else None
    if plots:
        plots.mkdir(parents=True, exist_ok=True)
    out = []
    for sid in ids:
        tr = sio.load_trace(a.traces, sid)
        s = summarize(tr, sid, width=a.width)
        out.append(s)
        if plots:
            _write_rows(plots / f"ell_trace_{sid}.csv", ["iter", "ell", "log_posterior"],
                        [(int(i), int(e), repr(float(lp))) for i, e, lp in zip(tr.iters, tr.ell, tr.log_posterior)])
            _write_rows(plots / f"locations_{sid}.csv", ["index", "min", "q25", "median", "q75", "max"],
                        [(m.index, *(m.quantiles[k] for k in ("min", "q25", "median", "q75", "max")))
                         for m in s.location_marginals])
            _write_rows(plots / f"zprobs_{sid}.csv", ["time", "z"],
                        [(t + 1, repr(z)) for t, z in enumerate(s.z_probs)])
            _write_rows(plots / f"band_{sid}.csv", ["time", "mean", "lower", "upper"],
                        [(t + 1, repr(m), repr(lo), repr(hi)) for t, (m, lo, hi)
                         in enumerate(zip(s.fitted_mean, s.fitted_band_lower, s.fitted_band_upper))])
    sio.write_summaries(a.output, out)
    print(f"summarized {len(out)} series into {a.output}")


def cmd_evaluate(a):
    summaries = sio.load_summaries(a.summaries)
    truth = sio.load_truth(a.truth)
    score = score_benchmark({k: s.ell_map for k, s in summaries.items()}, {k: v[0] for k, v in truth.items()})
    rows = [(ell, n, repr(mae), "" if se is None else repr(se)) for ell, n, mae, se in score.rows()]
    _write_rows(a.output, ["ell", "n", "mae", "se"], rows)
    if a.histogram:
        _write_rows(a.histogram, ["ell", "error", "count"],
                    [(ell, err, c) for ell, h in score.error_hist.items() for err, c in sorted(h.items())])
    hits = sum(c for ell, h in score.error_hist.items() for err, c in h.items() if err == 0)
    total = sum(score.n)
    print(f"exact recovery {hits}/{total}")
    for ell, n, mae, se in score.rows():
        print(f"ell={ell} n={n} mae={mae:.3f} se={'-' if se is None else f'{se:.3f}'}")


def cmd_check_priors(a):
    cfg = _prior(a).validate(a.T)
    holds, worst = check_exponential_decrease(cfg, a.T, a.ell_star, C=a.C)
    print(f"exponential_decrease={'true' if holds else 'false'} max_ratio={'none' if worst is None else repr(worst)}")
    if a.pmf:
        p = normalized_ell_prior(a.T, cfg)
        _write_rows(a.pmf, ["ell", "prob"], [(k, repr(float(v))) for k, v in enumerate(p)])


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="slopechange", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw a synthetic benchmark dataset")
    s.add_argument("scenario", nargs="?", help="key=value scenario file (flags override it)")
    s.add_argument("--data", default="data.csv")
    s.add_argument("--truth", default="truth.csv")
    s.add_argument("--variances", default=None, help="also write the true variances here")
    s.add_argument("--T", type=int, default=200)
    s.add_argument("--N", type=int, default=30)
    s.add_argument("--R", type=int, default=3)
    s.add_argument("--ell-range", type=_int_list, default=list(range(10)))
    s.add_argument("--noise-kind", choices=[NOISY, EXACT], default=NOISY)
    s.add_argument("--variance-kind", choices=[FREE_PER_SERIES, SHARED_ACROSS_SERIES], default=FREE_PER_SERIES)
    s.add_argument("--center-jitter", type=_bool, default=True)
    s.add_argument("--jitter-trials", type=int, default=100)
    s.add_argument("--jitter-prob", type=float, default=0.5)
    s.add_argument("--replicate-shift-mean", type=float, default=2.0)
    s.add_argument("--slope-sd", type=float, default=0.3)
    s.add_argument("--sign-flip-prob", type=float, default=0.8)
    s.add_argument("--endpoint-var", type=float, default=1.0)
    s.add_argument("--max-retries", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate, config_attr="scenario")

    s = sub.add_parser("estimate-variance", help="plug-in variance estimates for samplers s1/s2")
    s.add_argument("data")
    s.add_argument("--mode", choices=["free", "shared"], default="free")
    s.add_argument("-o", "--output", default="variances.csv")
    s.add_argument("--nu0", type=float, default=0.1)
    _add_variance_args(s)
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_estimate_variance, config_attr="config")

    s = sub.add_parser("run", help="sample every series")
    s.add_argument("data")
    s.add_argument("--sampler", choices=sorted(SAMPLER_MODES), default="s1")
    s.add_argument("--variances", default=None, help="variance CSV for s1/s2")
    s.add_argument("--fuse", type=_bool, nargs="?", const=True, default=False,
                   help="compute the s1/s2 plug-in variances in this run")
    s.add_argument("-o", "--output", default="traces")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=None, help="worker processes (default: $SLOPECHANGE_WORKERS or 1)")
    s.add_argument("--n-iter", type=int, default=70000)
    s.add_argument("--burn-in", type=int, default=20000)
    s.add_argument("--thin", type=int, default=10)
    s.add_argument("--warm-start", type=int, default=30000, help="s1 iterations before an s3 chain")
    s.add_argument("--c", type=float, default=0.05)
    s.add_argument("--d1", type=int, default=1)
    s.add_argument("--d2", type=int, default=None, help="default max(1, T // 20)")
    _add_prior_args(s)
    _add_variance_args(s)
    s.add_argument("--prior-only", type=_bool, nargs="?", const=True, default=False,
                   help="test hook: drop the likelihood and sample the prior")
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_run, config_attr="config")

    s = sub.add_parser("summarize", help="posterior summaries from a trace directory")
    s.add_argument("traces")
    s.add_argument("-o", "--output", default="summaries.json")
    s.add_argument("--plots", default=None, help="directory for plot-data CSVs")
    s.add_argument("--width", type=float, default=2.0, help="band half-width in posterior sd")
    s.set_defaults(func=cmd_summarize, config_attr=None)

    s = sub.add_parser("evaluate", help="MAE of the MAP number of change-points against the truth")
    s.add_argument("summaries")
    s.add_argument("truth")
    s.add_argument("-o", "--output", default="mae-table.csv")
    s.add_argument("--histogram", default=None, help="also write signed-error counts here")
    s.set_defaults(func=cmd_evaluate, config_attr=None)

    s = sub.add_parser("check-priors", help="exponential-decrease diagnostic of the count prior")
    s.add_argument("--T", type=int, required=True)
    s.add_argument("--ell-star", type=int, default=0)
    s.add_argument("--C", type=float, default=1.0)
    s.add_argument("--pmf", default=None, help="write the normalized prior pmf here")
    _add_prior_args(s)
    s.set_defaults(func=cmd_check_priors, config_attr=None)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        cfg_path = getattr(a, a.config_attr) if a.config_attr else None
        if cfg_path:
            sp = parser._subparsers._group_actions[0].choices[a.command]
            _apply_config(sp, cfg_path)
            a = parser.parse_args(argv)
        rc = a.func(a)
        return int(rc or 0)
    except SlopeChangeError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
    except OSError as e:
        print(f"error: io-error: {e}", file=sys.stderr)
    except (ValueError, argparse.ArgumentTypeError) as e:
        print(f"error: config-error: {e}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
