#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy fallback.

Times the row logsumexp/softmax kernels on training-shaped batches and the
fused Sinkhorn dual solver on a typical token-cluster problem, then one
end-to-end image encode with whichever backend is active.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from crossloc import kernels
from crossloc.kernels import _numpy


def _best_of(fn, repeats=5, loops=200):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def main() -> None:
    rng = np.random.default_rng(0)
    compiled = kernels._core
    if compiled is None:
        print("compiled kernels unavailable; timing the NumPy fallback only")

    rows = []
    x_small = np.ascontiguousarray(rng.normal(size=(16, 8)) * 2)
    x_batch = np.ascontiguousarray(rng.normal(size=(64 * 16, 8)) * 2)
    log_a = np.log(np.full(16, 1 / 16))
    log_b = np.log(np.full(8, 1 / 8))

    cases = [
        ("logsumexp 16x8", lambda m: m.logsumexp_last(x_small) if m is _numpy else m.logsumexp_2d(x_small)),
        ("logsumexp 1024x8", lambda m: m.logsumexp_last(x_batch) if m is _numpy else m.logsumexp_2d(x_batch)),
        ("softmax 1024x8", lambda m: m.softmax_last(x_batch) if m is _numpy else m.softmax_2d(x_batch)),
        ("sinkhorn duals 16x8 (100 it)", lambda m: m.sinkhorn_duals(x_small, log_a, log_b, 100, 0.0)),
    ]
    for name, call in cases:
        t_np = _best_of(lambda: call(_numpy))
        if compiled is not None:
            t_c = _best_of(lambda: call(compiled))
            rows.append((name, t_np, t_c))
        else:
            rows.append((name, t_np, None))

    print(f"{'kernel':32s} {'numpy':>12s} {'compiled':>12s} {'speedup':>8s}")
    for name, t_np, t_c in rows:
        if t_c is None:
            print(f"{name:32s} {t_np * 1e6:10.1f}us {'-':>12s} {'-':>8s}")
        else:
            print(f"{name:32s} {t_np * 1e6:10.1f}us {t_c * 1e6:10.1f}us {t_np / t_c:7.1f}x")

    # one end-to-end encode with the active backend
    from crossloc.image_aggregator import AggregatorConfig, AggregatorParams, ImageTokenSet, encode_image
    from crossloc.numerics import Rng

    params = AggregatorParams.init(AggregatorConfig(token_dim=32, hidden=32, clusters=8, cluster_dim=8), Rng(0))
    tokens = ImageTokenSet(rng.normal(size=(16, 32)))
    t = _best_of(lambda: encode_image(tokens, params), repeats=3, loops=50)
    print(f"\nencode_image (backend={kernels.backend_name()}): {t * 1e3:.3f} ms")


if __name__ == "__main__":
    main()
