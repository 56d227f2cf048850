"""Time the compiled geometric kernels against their pure-numpy twins.

Both backends must return bit-identical results -- this script asserts that
while it measures. Run from the repository root:

    python benchmarks/compare_backends.py [--points 4096] [--centers 256]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from seqseg.geometry import _kernels_np

try:
    from seqseg.geometry import _kernels
except ImportError:
    _kernels = None


def timeit(fn, repeats: int):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return result, best


def bench(points: int, centers: int, repeats: int, seed: int) -> None:
    rng = np.random.default_rng(seed)
    coords = np.ascontiguousarray(rng.uniform(-4, 4, size=(points, 3)))
    prev = np.ascontiguousarray(rng.uniform(-4, 4, size=(centers, 3)))
    cur = np.ascontiguousarray(prev + rng.normal(0, 0.1, size=prev.shape))
    query = coords[0]
    cand = np.sort(rng.choice(points, size=min(512, points), replace=False)).astype(np.int64)

    cases = {
        "fps": lambda mod: mod.fps(coords, centers, 0),
        "radius_filter": lambda mod: mod.radius_filter(coords, query, cand, 1.0, 64),
        "knn": lambda mod: mod.knn(prev, query, 8),
        "nearest_match": lambda mod: mod.nearest_match(prev, cur),
    }
    backends = {"python": _kernels_np}
    if _kernels is not None:
        backends["compiled"] = _kernels

    print(f"points={points} centers={centers} repeats={repeats}")
    header = f"{'kernel':>16}" + "".join(f"{name:>14}" for name in backends)
    print(header + ("   speedup" if len(backends) == 2 else ""))
    for name, call in cases.items():
        results, times = {}, {}
        for bname, mod in backends.items():
            results[bname], times[bname] = timeit(lambda m=mod: call(m), repeats)
        if len(backends) == 2:
            a, b = results["python"], results["compiled"]
            flat_a = a if isinstance(a, np.ndarray) else np.concatenate(
                [np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel() for x in a])
            flat_b = b if isinstance(b, np.ndarray) else np.concatenate(
                [np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel() for x in b])
            assert np.array_equal(flat_a, flat_b), f"{name}: backends disagree"
        row = f"{name:>16}" + "".join(f"{times[b] * 1e6:>12.1f}us" for b in backends)
        if len(backends) == 2:
            row += f"{times['python'] / times['compiled']:>9.1f}x"
        print(row)
    if _kernels is None:
        print("compiled backend unavailable; showing python timings only")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--centers", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    bench(args.points, args.centers, args.repeats, args.seed)
