"""Compare the numba and pure-numpy energy kernels.

Each backend runs in its own interpreter because the backend is fixed at
import time by ``SELFINT_DISABLE_NUMBA``.  Prints one row per (kernel, size)
with the median wall time of each backend and the speed-up.

    python3 benchmarks/bench_kernels.py [--sizes 65 129 257] [--repeat 5] [--gamma 1.0]
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from selfint import _accel
from selfint.model import ModelSpec, build_kernel
sizes, repeat, GAMMA = json.loads(sys.argv[1]), int(sys.argv[2]), float(sys.argv[3])
out = {"backend": _accel.BACKEND, "timings": {}}
for M in sizes:
    spec = ModelSpec(t=1, alpha=1.0, gamma=GAMMA, xi=2.0, n_per_unit=(M - 1) // 2)
    ks = spec.kernels()
    w = np.ascontiguousarray(build_kernel(spec).pair_weights())
    rng = np.random.default_rng(0)
    x0 = np.cumsum(rng.standard_normal((M, 1)), axis=0)
    x0[0] = 0.0
    steps = 0.3 * rng.standard_normal((M - 1, 1))
    logu = np.log(rng.random(M - 1))
    shifts = 0.3 * rng.standard_normal((M - 1, 1))
    nt, coef = float(spec.n_per_unit), 1.0 / spec.n_per_unit ** 2
    jobs = {
        "pair_sum": lambda: ks.pair_sum(x0, w),
        "site_sweep": lambda: ks.site_sweep(x0.copy(), 1, steps, logu, w, nt, coef, False),
        "tail_sweep": lambda: ks.tail_sweep(x0.copy(), shifts, logu, w, nt, coef, False),
    }
    for name, job in jobs.items():
        job()  # compile / warm up
        ts = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            job()
            ts.append(time.perf_counter() - t0)
        out["timings"][f"{name}/{M}"] = float(np.median(ts))
print(json.dumps(out))
"""


def run_backend(disable_numba, sizes, repeat, gamma):
    env = dict(os.environ)
    env["SELFINT_DISABLE_NUMBA"] = "1" if disable_numba else "0"
    res = subprocess.run([sys.executable, "-c", WORKER, json.dumps(sizes), str(repeat), str(gamma)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[65, 129, 257])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--gamma", type=float, default=1.0, help="potential exponent")
    args = ap.parse_args(argv)
    fast = run_backend(False, args.sizes, args.repeat, args.gamma)
    slow = run_backend(True, args.sizes, args.repeat, args.gamma)
    print(f"{'kernel/sites':<18}{fast['backend'] + ' (ms)':>14}{slow['backend'] + ' (ms)':>14}"
          f"{'speed-up':>10}")
    for key, tf in fast["timings"].items():
        ts = slow["timings"][key]
        print(f"{key:<18}{1e3 * tf:>14.3f}{1e3 * ts:>14.3f}{ts / tf:>10.1f}")


if __name__ == "__main__":
    main()
