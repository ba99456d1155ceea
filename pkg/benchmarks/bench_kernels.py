"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

from ultrkit import kernels
from ultrkit.letor import GenConfig, generate_synthetic
from ultrkit.prod import discordant_pairs


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--queries", type=int, default=300)
    args = p.parse_args()

    data = generate_synthetic(GenConfig(n_queries=args.queries), seed=0)
    X, pairs = discordant_pairs(data)
    order = np.random.default_rng(0).permutation(len(pairs))
    labels = np.concatenate([q.labels for q in data])
    offsets = np.concatenate([[0], np.cumsum([len(q) for q in data])])

    cases = {
        f"hinge_sgd_epoch ({len(pairs)} pairs)":
            lambda b: kernels.hinge_sgd_epoch(X, pairs, order, np.zeros(X.shape[1]), 0.01, 0.01, backend=b),
        f"graded_metrics ({len(data)} queries)":
            lambda b: kernels.graded_metrics(labels, offsets, 10, 4, backend=b),
    }
    backends = ["python"]
    try:
        import ultrkit._ckernels  # noqa: F401
        backends.append("cython")
    except ImportError:
        print("compiled kernels not built; timing the fallback only")

    print(f"{'kernel':36s} " + " ".join(f"{b:>10s}" for b in backends) + "   speedup")
    for name, fn in cases.items():
        t = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
        speed = f"{t['python'] / t['cython']:8.1f}x" if "cython" in t else ""
        print(f"{name:36s} " + " ".join(f"{t[b] * 1e3:8.2f}ms" for b in backends) + "  " + speed)


if __name__ == "__main__":
    main()
