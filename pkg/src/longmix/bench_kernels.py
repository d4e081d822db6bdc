"""Benchmark the compiled kernels against the pure-numpy fallback.

The backend is fixed at import time by the LONGMIX_NO_NUMBA environment
variable, so this module re-runs itself in two subprocesses (one per
backend) and prints a comparison table. Run as

    python -m longmix.bench_kernels
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _bench_once(n: int, d: int, reps: int) -> dict:
    from . import kernels
    from .rng import RngStream

    rng = RngStream(12345)
    eta = np.ascontiguousarray(rng.standard_normal((n, d)))
    mu0 = np.zeros(d)
    delta0 = np.eye(d)

    labels = rng.integers(3, size=n).astype(np.int64)
    counts = np.zeros(n + 1, dtype=np.int64)
    sums = np.zeros((n + 1, d))
    scatters = np.zeros((n + 1, d, d))
    for i in range(n):
        c = labels[i]
        counts[c] += 1
        sums[c] += eta[i]
        scatters[c] += np.outer(eta[i], eta[i])

    # compile before timing so jit cost is not counted
    kernels.indicator_sweep(eta, labels.copy(), counts.copy(), sums.copy(),
                            scatters.copy(), 3, 0.0, mu0, 0.01, float(d + 2),
                            delta0, rng.random(n))
    tic = time.perf_counter()
    for _ in range(reps):
        kernels.indicator_sweep(eta, labels.copy(), counts.copy(), sums.copy(),
                                scatters.copy(), 3, 0.0, mu0, 0.01, float(d + 2),
                                delta0, rng.random(n))
    sweep_s = (time.perf_counter() - tic) / reps

    n_obs = 6 * n
    y = rng.standard_normal(n_obs)
    xmat = np.ascontiguousarray(rng.standard_normal((n_obs, 1)))
    zmat = np.ascontiguousarray(rng.standard_normal((n_obs, 2)))
    ind = np.ascontiguousarray(np.repeat(np.arange(n, dtype=np.int64), 6))
    beta = np.ascontiguousarray(rng.standard_normal((n, 2)))
    gamma = np.zeros(1)
    out = np.zeros(n)
    kernels.glm_loglik_feature(y, xmat, zmat, ind, beta, gamma, 0, 1.0, out)
    tic = time.perf_counter()
    for _ in range(reps * 10):
        out[:] = 0.0
        kernels.glm_loglik_feature(y, xmat, zmat, ind, beta, gamma, 0, 1.0, out)
    loglik_s = (time.perf_counter() - tic) / (reps * 10)

    draws = np.ascontiguousarray(rng.integers(4, size=(200, n)).astype(np.int64))
    cmat = np.zeros((n, n))
    kernels.cocluster_counts(draws, cmat)
    tic = time.perf_counter()
    for _ in range(max(reps // 5, 1)):
        cmat[:] = 0.0
        kernels.cocluster_counts(draws, cmat)
    cocluster_s = (time.perf_counter() - tic) / max(reps // 5, 1)

    return {"backend": "numba" if kernels.USE_NUMBA else "numpy",
            "indicator_sweep_s": sweep_s,
            "glm_loglik_s": loglik_s,
            "cocluster_s": cocluster_s}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--d", type=int, default=5)
    parser.add_argument("--reps", type=int, default=50)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)

    if args.worker:
        print(json.dumps(_bench_once(args.n, args.d, args.reps)))
        return 0

    results = []
    for flag in ("0", "1"):
        env = dict(os.environ, LONGMIX_NO_NUMBA=flag)
        cmd = [sys.executable, "-m", "longmix.bench_kernels", "--worker",
               "--n", str(args.n), "--d", str(args.d), "--reps", str(args.reps)]
        out = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(out.stdout.strip().splitlines()[-1]))

    print(f"{'kernel':<20}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    numba, numpy_ = results
    for key in ("indicator_sweep_s", "glm_loglik_s", "cocluster_s"):
        ratio = numpy_[key] / numba[key] if numba[key] > 0 else float("inf")
        print(f"{key[:-2]:<20}{numba[key] * 1e3:>10.3f}ms{numpy_[key] * 1e3:>10.3f}ms"
              f"{ratio:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
