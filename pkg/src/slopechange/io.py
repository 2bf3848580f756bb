"""Text formats: datasets, ground truth, variances, traces, summaries, configs.

Floats are written with ``repr`` so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .model import ChainState, Dataset, SlopeChangeError
from .sampler import Trace
from .summaries import SeriesSummary

DATA_HEADER = ["series_id", "time", "replicate", "value"]
TRUTH_HEADER = ["series_id", "ell", "tau"]
VARIANCE_HEADER = ["series_id", "time", "sigma2"]
TRACE_HEADER = ["iter", "ell", "tau", "log_posterior", "accept_move1", "accept_move2", "accept_move3", "move3_kind"]
THETA_HEADER = ["iter", "knots", "theta"]
SHARED_ID = "*"


class ParseError(SlopeChangeError):
    category = "parse-error"


def _fmt(x) -> str:
    return repr(float(x))


def _join(values, fmt=str) -> str:
    return ";".join(fmt(v) for v in values)


def _split_ints(text: str, where: str) -> list[int]:
    if text.strip() == "":
        return []
    try:
        return [int(v) for v in text.split(";")]
    except ValueError:
        raise ParseError(f"{where}: bad integer list {text!r}") from None


def _reader(path, header):
    f = open(path, newline="", encoding="utf-8")
    rd = csv.reader(f)
    try:
        first = next(rd)
    except StopIteration:
        f.close()
        raise ParseError(f"{path}: empty file") from None
    if [h.strip() for h in first] != header:
        f.close()
        raise ParseError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
    return f, rd


def _float(text, where):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{where}: non-finite value {text!r}")
    return v


def _int(text, where):
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{where}: not an integer: {text!r}") from None


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def load_dataset(path) -> Dataset:
    """Read a long-format CSV ``series_id,time,replicate,value``.

    Every series must cover times 1..T and replicates 1..R with the same T
    and R; errors name the offending row (row 1 is the header).
    """
    cells: dict[str, dict[tuple[int, int], float]] = {}
    f, rd = _reader(path, DATA_HEADER)
    with f:
        for rowno, row in enumerate(rd, start=2):
            where = f"{path}: row {rowno}"
            if len(row) != 4 or any(c.strip() == "" for c in row):
                raise ParseError(f"{where}: expected 4 non-empty cells")
            sid = row[0].strip()
            t = _int(row[1], where)
            r = _int(row[2], where)
            v = _float(row[3], where)
            if t < 1 or r < 1:
                raise ParseError(f"{where}: time and replicate are 1-based")
            series = cells.setdefault(sid, {})
            if (t, r) in series:
                raise ParseError(f"{where}: duplicate key (series_id={sid}, time={t}, replicate={r})")
            series[(t, r)] = v
    if not cells:
        raise ParseError(f"{path}: no data rows")
    ids = list(cells)
    shape = None
    for sid in ids:
        keys = cells[sid]
        T = max(t for t, _ in keys)
        R = max(r for _, r in keys)
        times = {t for t, _ in keys}
        if len(times) != T:
            missing = min(set(range(1, T + 1)) - times)
            raise ParseError(f"{path}: series {sid}: time {missing} missing (times must be contiguous from 1)")
        if len(keys) != T * R:
            t, r = next((t, r) for t in range(1, T + 1) for r in range(1, R + 1) if (t, r) not in keys)
            raise ParseError(f"{path}: series {sid}: missing cell time={t}, replicate={r}")
        if shape is None:
            shape = (T, R)
        elif shape != (T, R):
            raise ParseError(f"{path}: series {sid} has T={T}, R={R} but series {ids[0]} has T={shape[0]}, R={shape[1]}")
    T, R = shape
    values = np.empty((len(ids), T, R))
    for n, sid in enumerate(ids):
        for (t, r), v in cells[sid].items():
            values[n, t - 1, r - 1] = v
    try:
        return Dataset(values, series_ids=ids)
    except SlopeChangeError as e:
        raise ParseError(f"{path}: {e}") from None


def write_dataset(path, dataset: Dataset):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(DATA_HEADER)
        for n, sid in enumerate(dataset.series_ids):
            for t in range(dataset.n_times):
                for r in range(dataset.n_reps):
                    w.writerow([sid, t + 1, r + 1, _fmt(dataset.values[n, t, r])])


# ---------------------------------------------------------------------------
# ground truth and variances
# ---------------------------------------------------------------------------


def write_truth(path, truth):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for s in truth.series:
            w.writerow([s.series_id, s.ell, _join(s.tau)])


def load_truth(path) -> dict[str, tuple[int, list[int]]]:
    """``{series_id: (ell, tau)}``."""
    out = {}
    f, rd = _reader(path, TRUTH_HEADER)
    with f:
        for rowno, row in enumerate(rd, start=2):
            where = f"{path}: row {rowno}"
            if len(row) != 3:
                raise ParseError(f"{where}: expected 3 cells")
            ell = _int(row[1], where)
            tau = _split_ints(row[2], where)
            if len(tau) != ell:
                raise ParseError(f"{where}: ell={ell} but {len(tau)} locations")
            if row[0] in out:
                raise ParseError(f"{where}: duplicate series_id {row[0]}")
            out[row[0]] = (ell, tau)
    return out


def write_variances(path, sigma2, series_ids, shared: bool = False):
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(VARIANCE_HEADER)
        rows = [(SHARED_ID, sigma2[0])] if shared else zip(series_ids, sigma2)
        for sid, s in rows:
            for t, v in enumerate(s):
                w.writerow([sid, t + 1, _fmt(v)])


def load_variances(path, dataset: Dataset) -> np.ndarray:
    """Variances as an (N, T) array aligned with ``dataset.series_ids``."""
    N, T = dataset.n_series, dataset.n_times
    by_id: dict[str, np.ndarray] = {}
    f, rd = _reader(path, VARIANCE_HEADER)
    with f:
        for rowno, row in enumerate(rd, start=2):
            where = f"{path}: row {rowno}"
            if len(row) != 3:
                raise ParseError(f"{where}: expected 3 cells")
            t = _int(row[1], where)
            v = _float(row[2], where)
            if not 1 <= t <= T:
                raise ParseError(f"{where}: time {t} outside 1..{T}")
            if not v > 0:
                raise ParseError(f"{where}: variance must be positive")
            s = by_id.setdefault(row[0], np.full(T, np.nan))
            if not np.isnan(s[t - 1]):
                raise ParseError(f"{where}: duplicate key (series_id={row[0]}, time={t})")
            s[t - 1] = v
    if SHARED_ID in by_id:
        if len(by_id) != 1:
            raise ParseError(f"{path}: shared ('*') rows cannot be mixed with per-series rows")
        rows = [by_id[SHARED_ID]] * N
    else:
        missing = [sid for sid in dataset.series_ids if sid not in by_id]
        if missing:
            raise ParseError(f"{path}: no variances for series {missing[0]}")
        rows = [by_id[sid] for sid in dataset.series_ids]
    out = np.stack(rows)
    if np.isnan(out).any():
        raise ParseError(f"{path}: some time-points have no variance")
    return out


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


def trace_paths(directory, series_id):
    d = Path(directory)
    return d / f"trace_{series_id}.csv", d / f"theta_{series_id}.csv"


def write_trace(directory, series_id, trace: Trace):
    trace_path, theta_path = trace_paths(directory, series_id)
    with open(trace_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for i in range(len(trace)):
            a = trace.accept[i]
            w.writerow([int(trace.iters[i]), int(trace.ell[i]), _join(trace.tau(i)),
                        _fmt(trace.log_posterior[i]), *(int(v) for v in a)])
    with open(theta_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(THETA_HEADER)
        for i in range(len(trace)):
            w.writerow([int(trace.iters[i]), _join(trace.knots(i)), _join(trace.theta_knots(i), _fmt)])
    return trace_path, theta_path


def load_trace(directory, series_id) -> Trace:
    trace_path, theta_path = trace_paths(directory, series_id)
    iters, ells, lps, acc = [], [], [], []
    f, rd = _reader(trace_path, TRACE_HEADER)
    with f:
        for rowno, row in enumerate(rd, start=2):
            where = f"{trace_path}: row {rowno}"
            if len(row) != len(TRACE_HEADER):
                raise ParseError(f"{where}: expected {len(TRACE_HEADER)} cells")
            iters.append(_int(row[0], where))
            ells.append(_int(row[1], where))
            lps.append(float(row[3]))
            acc.append([_int(v, where) for v in row[4:]])
    knots, thetas = [], []
    f, rd = _reader(theta_path, THETA_HEADER)
    with f:
        for rowno, row in enumerate(rd, start=2):
            where = f"{theta_path}: row {rowno}"
            if rowno - 2 >= len(iters) or _int(row[0], where) != iters[rowno - 2]:
                raise ParseError(f"{where}: does not match the trace file")
            k = _split_ints(row[1], where)
            th = [float(v) for v in row[2].split(";")]
            if len(k) != ells[rowno - 2] + 2 or len(th) != len(k):
                raise ParseError(f"{where}: knot and theta counts disagree with ell")
            knots.append(k)
            thetas.append(th)
    if len(knots) != len(iters):
        raise ParseError(f"{theta_path}: {len(knots)} rows for {len(iters)} trace records")
    if not iters:
        raise ParseError(f"{trace_path}: no records")
    lens = np.array([len(k) for k in knots])
    ptr = np.concatenate(([0], np.cumsum(lens)[:-1])).astype(np.int64)
    return Trace(
        n_times=int(knots[0][-1]),
        iters=np.array(iters, dtype=np.int64),
        ell=np.array(ells, dtype=np.int64),
        log_posterior=np.array(lps),
        accept=np.array(acc, dtype=np.int64).reshape(len(iters), 4),
        ptr=ptr,
        knots_flat=np.concatenate([np.asarray(k, dtype=np.int64) for k in knots]),
        theta_flat=np.concatenate([np.asarray(t) for t in thetas]))


# ---------------------------------------------------------------------------
# summaries and configs
# ---------------------------------------------------------------------------


def write_summaries(path, summaries: list[SeriesSummary]):
    doc = {s.series_id: s.to_dict() for s in summaries}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_summaries(path) -> dict[str, SeriesSummary]:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        return {k: SeriesSummary.from_dict(v) for k, v in doc.items()}
    except (json.JSONDecodeError, TypeError, KeyError) as e:
        raise ParseError(f"{path}: not a summaries document ({e})") from None


def read_config(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def write_config(path, values: dict):
    with open(path, "w", encoding="utf-8") as f:
        for k in sorted(values):
            v = values[k]
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            f.write(f"{k} = {v}\n")


def state_from_trace(trace: Trace, i: int) -> ChainState:
    """The recorded record ``i`` as a state (theta linearly filled between knots)."""
    grid = np.arange(1, trace.n_times + 1)
    theta = np.interp(grid, trace.knots(i), trace.theta_knots(i))
    return ChainState(int(trace.ell[i]), trace.tau(i).copy(), theta)
