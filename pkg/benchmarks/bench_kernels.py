#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Run:  python3 benchmarks/bench_kernels.py
The numba path must be importable; the numpy reference implementations are
always available as the _*_np functions, so one process can time both.
"""

import time

import numpy as np

from tiwlab import kernels


def bench(fn, *args, repeat=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    n, d, k = 100_000, 2, 4
    X = np.ascontiguousarray(rng.normal(size=(n, d)))
    w = rng.uniform(0.5, 2.0, size=k)
    log_w = np.log(w / w.sum())
    means = np.ascontiguousarray(rng.normal(scale=2.0, size=(k, d)))
    variances = np.ascontiguousarray(rng.uniform(0.3, 2.0, size=k))
    A = np.ascontiguousarray(rng.normal(size=(4000, d)))
    B = np.ascontiguousarray(rng.normal(size=(4000, d)))

    if not kernels.NUMBA_ENABLED:
        print("numba path disabled (TIWLAB_NUMBA=0 or numba missing); "
              "timing the numpy path only")

    cases = [
        ("gm_logpdf    (100k x 4 comp)", kernels._gm_logpdf_np,
         getattr(kernels, "_gm_logpdf_nb", None), (X, log_w, means, variances)),
        ("gm_score     (100k x 4 comp)", kernels._gm_score_np,
         getattr(kernels, "_gm_score_nb", None), (X, log_w, means, variances)),
        ("gm_posterior (100k x 4 comp)", kernels._gm_posterior_np,
         getattr(kernels, "_gm_posterior_nb", None), (X, log_w, means, variances)),
        ("pairwise_mean_dist (4k x 4k)", kernels._pairwise_mean_dist_np,
         getattr(kernels, "_pairwise_mean_dist_nb", None), (A, B)),
    ]

    print(f"{'kernel':32s} {'numpy':>10s} {'numba':>10s} {'speedup':>9s}")
    for name, np_fn, nb_fn, args in cases:
        t_np = bench(np_fn, *args)
        if nb_fn is not None:
            t_nb = bench(nb_fn, *args)
            print(f"{name:32s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms "
                  f"{t_np / t_nb:8.1f}x")
        else:
            print(f"{name:32s} {t_np * 1e3:9.2f}ms {'-':>10s} {'-':>9s}")

    # agreement spot check
    a = kernels._gm_logpdf_np(X[:1000], log_w, means, variances)
    b = kernels.gm_logpdf(X[:1000], log_w, means, variances)
    print(f"max |numpy - selected| on gm_logpdf: {np.abs(a - b).max():.3e}")


if __name__ == "__main__":
    main()
