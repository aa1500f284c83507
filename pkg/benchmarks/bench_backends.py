"""Timing comparison of the numba kernels against the pure-numpy fallback.

Run from the repo root:

    python benchmarks/bench_backends.py

Each kernel is warmed once (JIT compile excluded), then timed over several
repeats; the table reports best-of wall times and the speedup of numba over
numpy. Matrix products are BLAS-bound on both backends and are included
only as context for where the crossover sits.
"""

import time

import numpy as np

from bsdegen.backends import available_backends, get_kernels


def best_of(fn, repeats=5):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def build_cases(k):
    seeds = np.arange(20_000, dtype=np.uint64) + np.uint64(7)
    x = np.linspace(-4.0, 4.0, 1_000_000)
    a = get_kernels("numpy").normals(np.uint64(1), 0, 512 * 64).reshape(512, 64)
    sig = np.array([4.0, 8.0, 16.0, 32.0])
    d2 = get_kernels("numpy").sqdist(a, a)
    return [
        ("normals 1e7", lambda: k.normals(np.uint64(3), 0, 10_000_000)),
        ("uniform rows 2e4x200", lambda: k.uniforms_rows(seeds, 0, 200)),
        ("gelu 1e6", lambda: k.gelu(x)),
        ("gelu_grad 1e6", lambda: k.gelu_grad(x)),
        ("sqdist 512x512x64", lambda: k.sqdist(a, a)),
        ("kernel_mix 512^2 x4", lambda: k.kernel_mix(d2, sig)),
        (
            "ou paths 2e4x200x32",
            lambda: k.ou_diag_terminal(
                seeds, np.full(32, 0.995), np.full(32, 0.1), np.ones(32), 200
            ),
        ),
    ]


def main():
    backends = available_backends()
    if "numba" not in backends:
        print("numba backend unavailable; nothing to compare")
        return
    results = {}
    for name in ("numba", "numpy"):
        k = get_kernels(name)
        for label, fn in build_cases(k):
            fn()  # warm (JIT compile / allocator)
            results.setdefault(label, {})[name] = best_of(fn)
    width = max(len(label) for label in results) + 2
    print(f"{'kernel':<{width}}{'numba':>10}{'numpy':>10}{'speedup':>9}")
    for label, t in results.items():
        print(
            f"{label:<{width}}{t['numba'] * 1e3:>8.1f}ms{t['numpy'] * 1e3:>8.1f}ms"
            f"{t['numpy'] / t['numba']:>8.1f}x"
        )


if __name__ == "__main__":
    main()
