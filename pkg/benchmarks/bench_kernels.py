"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on the shapes met in a 100x100, p=5, d=4 fusion (plus a
larger simplex case), and the two backends are checked to agree before timing.
"""
import argparse
import timeit

import numpy as np

from fumi import _fallback

try:
    from fumi import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    p, d, m1, m2 = 5, 4, 25, 25
    V = rng.normal(size=(p, 100 * 100))
    V_big = rng.normal(size=(20, 100 * 100))
    Chat = rng.normal(size=(p, d, m1, d, m2)) + 1j * rng.normal(size=(p, d, m1, d, m2))
    D = rng.normal(size=(d, m1, d, m2)) + 1j * rng.normal(size=(d, m1, d, m2))
    power = (np.abs(D) ** 2).sum(axis=(0, 2))
    lam = rng.uniform(0.5, 2.0, p)
    return {
        "simplex p=5 n=1e4": ("project_simplex_columns", (V,)),
        "simplex p=20 n=1e4": ("project_simplex_columns", (V_big,)),
        "woodbury p=5 100x100 d=4": ("woodbury_combine", (Chat, D, power, lam, float(d * d))),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, (fn, inputs) in cases(rng).items():
        py = getattr(_fallback, fn)
        t_py = min(timeit.repeat(lambda: py(*inputs), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:28s} {1e3 * t_py:10.2f} {'n/a':>10s}")
            continue
        cy = getattr(_kernels, fn)
        diff = float(np.abs(np.asarray(cy(*inputs)) - np.asarray(py(*inputs))).max())
        t_cy = min(timeit.repeat(lambda: cy(*inputs), number=1, repeat=args.repeat))
        print(f"{name:28s} {1e3 * t_py:10.2f} {1e3 * t_cy:10.2f} {t_py / t_cy:8.1f} {diff:10.1e}")


if __name__ == "__main__":
    main()
