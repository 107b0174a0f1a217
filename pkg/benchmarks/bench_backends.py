"""Time the numba-compiled kernels against the pure-numpy fallback.

Runs each hot kernel on workload-sized inputs under both backends and
prints a small table. The numba path is compiled (and cached) before
timing. Usage:

    python benchmarks/bench_backends.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gradlens import kernels


def _bench(fn, args, repeats):
    fn(*args)  # warm (JIT compile on the numba side)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases(rng):
    probs = np.full(8, 1.0 / 8)
    logits = rng.standard_normal(8)
    log_probs = np.log(probs)
    actions = rng.integers(0, 8, size=2048).astype(np.int64)
    coeffs = rng.standard_normal(2048)
    w1 = rng.standard_normal((32, 16))
    b1 = rng.standard_normal(32)
    w2 = rng.standard_normal((8, 32))
    b2 = rng.standard_normal(8)
    x = rng.standard_normal(16)
    h = np.tanh(w1 @ x + b1)
    dlogits = rng.standard_normal(8)
    series = rng.standard_normal(200_000)
    cdf = np.cumsum(probs)
    uniforms = rng.random(200_000)
    eigs = rng.uniform(0.5, 5.0, 64)
    delta0 = rng.standard_normal(64)
    samples = rng.standard_normal((50_000, 8, 4))
    return [
        ("log_softmax", "log_softmax", (logits,)),
        ("weighted_dlogits", "weighted_dlogits", (probs, actions, coeffs)),
        ("entropy_dlogits", "entropy_dlogits", (probs, log_probs)),
        ("mlp_forward", "mlp_forward", (w1, b1, w2, b2, x)),
        ("mlp_backward", "mlp_backward", (dlogits, h, x, w2)),
        ("normalize_advantages", "normalize_advantages", (coeffs, 1e-8)),
        ("ema_series (200k)", "ema_series", (series, 0.95)),
        ("categorical_draws (200k)", "categorical_draws", (cdf, uniforms)),
        ("quadratic_descent (64d x 5k)", "quadratic_descent", (eigs, delta0, 0.01, 5000)),
        ("cross_and_naive (50k x 8 x 4)", "cross_and_naive", (samples,)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not kernels.USING_NUMBA:
        print("note: numba backend unavailable or disabled; timing numpy only")

    rng = np.random.default_rng(0)
    cases = make_cases(rng)

    print(f"{'kernel':<32} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    for label, name, call_args in cases:
        t_np = _bench(kernels.numpy_impls[name], call_args, args.repeats)
        if kernels.USING_NUMBA:
            t_nb = _bench(getattr(kernels, name), call_args, args.repeats)
            ratio = t_np / t_nb if t_nb > 0 else float("inf")
            print(f"{label:<32} {t_np * 1e6:>10.1f}us {t_nb * 1e6:>10.1f}us {ratio:>8.1f}x")
        else:
            print(f"{label:<32} {t_np * 1e6:>10.1f}us {'-':>12} {'-':>9}")


if __name__ == "__main__":
    main()
