"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on identical inputs under both backends; outputs are checked
for bitwise equality before timings are reported.
"""
import argparse
import timeit

import numpy as np

from microformer import _pykernels
from microformer.constitutive import MATRIX
from microformer.loadpath import random_path

try:
    from microformer import _ckernels
except ImportError:
    _ckernels = None


def cases():
    rng = np.random.default_rng(0)
    lam, mu = MATRIX.lame
    strains = [random_path(rng).strain() * 5 for _ in range(20)]
    centers = rng.uniform(0, 70, size=(120, 2))
    # every candidate sits on a random existing fiber, so the search scans to the end
    candidates = centers[rng.integers(len(centers), size=4000)] + rng.normal(scale=0.5, size=(4000, 2))
    grid = (rng.random((24, 24)) < 0.4).astype(np.float64)
    return {
        "j2_path (20 x 100 steps)": lambda k: [k.j2_path(s, lam, mu, MATRIX.sigma_y, np.zeros(4))
                                               for s in strains],
        "first_free (4000 candidates, 120 fibers)": lambda k: k.first_free(candidates, 0, centers, 70.0,
                                                                           49.0),
        "two_point_direct (24 x 24)": lambda k: k.two_point_direct(grid, grid),
    }


def _same(a, b):
    if isinstance(a, (list, tuple)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    print(f"{'kernel':44s} {'python':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, fn in cases().items():
        if not _same(fn(_pykernels), fn(_ckernels)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:44s} {t_py * 1e3:8.2f}ms {t_c * 1e3:8.2f}ms {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
