"""Time one chain under the compiled kernels and under the plain numpy path.

    python3 benchmarks/bench_kernels.py [--T 200] [--n-iter 20000]

Each backend runs in its own interpreter because the switch is read at import.
"""

import argparse
import json
import os
import subprocess
import sys
import textwrap

CHILD = textwrap.dedent("""
    import json, sys, time
    import numpy as np
    from slopechange import _accel
    from slopechange.synthetic import SimScenario, simulate_dataset
    from slopechange.runner import run_dataset
    from slopechange.sampler import SamplerConfig

    T, n_iter = int(sys.argv[1]), int(sys.argv[2])
    ds, _ = simulate_dataset(SimScenario(T=T, N=1, R=3, ell_range=[3], seed=1))
    cfg = SamplerConfig(n_iter=min(n_iter, 200), burn_in=0)
    run_dataset(ds, cfg, seed=0, workers=1)  # compile / warm caches
    cfg = SamplerConfig(n_iter=n_iter, burn_in=0)
    t0 = time.perf_counter()
    tr = run_dataset(ds, cfg, seed=0, workers=1)[0]
    dt = time.perf_counter() - t0
    print(json.dumps({"backend": _accel.backend(), "seconds": dt,
                      "iter_per_s": n_iter / dt, "last_logpost": float(tr.log_posterior[-1])}))
""")


def run(disable, T, n_iter):
    env = dict(os.environ, SLOPECHANGE_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", CHILD, str(T), str(n_iter)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=200)
    ap.add_argument("--n-iter", type=int, default=20000)
    a = ap.parse_args()
    fast = run(False, a.T, a.n_iter)
    slow = run(True, a.T, a.n_iter)
    for r in (fast, slow):
        print(f"{r['backend']:>6}: {r['seconds']:8.3f} s  {r['iter_per_s']:10.0f} it/s")
    print(f"speedup: {slow['seconds'] / fast['seconds']:.1f}x")
    print("same chain:", fast["last_logpost"] == slow["last_logpost"])


if __name__ == "__main__":
    main()
