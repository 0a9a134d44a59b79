"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from attnkern import _kernels_py

try:
    from attnkern import _kernels
except ImportError:
    _kernels = None

CASES = [
    ("linear_scan", dict(L=256, M=64, dv=16)),
    ("linear_scan", dict(L=1024, M=256, dv=64)),
    ("causal_softmax", dict(L=256, d=16, dv=16)),
    ("causal_softmax", dict(L=1024, d=64, dv=64)),
]


def inputs(name, rng, L, dv, M=None, d=None):
    v = rng.standard_normal((L, dv))
    if name == "linear_scan":
        return (np.exp(rng.standard_normal((L, M))), np.exp(rng.standard_normal((L, M))), v, 1e-12)
    return (rng.standard_normal((L, d)), rng.standard_normal((L, d)), v, 1.0 / np.sqrt(d))


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'shape':<26}{'python ms':>11}{'cython ms':>11}{'speedup':>9}")
    for name, shape in CASES:
        a = inputs(name, rng, **shape)
        t_py = best(getattr(_kernels_py, name), a, args.repeat)
        label = " ".join(f"{k}={v}" for k, v in shape.items())
        if _kernels is None:
            print(f"{name:<16}{label:<26}{1e3 * t_py:>11.2f}{'n/a':>11}{'':>9}")
            continue
        t_cy = best(getattr(_kernels, name), a, args.repeat)
        print(f"{name:<16}{label:<26}{1e3 * t_py:>11.2f}{1e3 * t_cy:>11.2f}{t_py / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
