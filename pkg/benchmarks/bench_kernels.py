"""Time the compiled grid-graph kernels against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py --sizes 128 256 512 --repeat 3

Both implementations run on the same synthetic slide crops; their outputs
are checked for equality before any timing is reported.
"""

import argparse
import dataclasses
import time

import numpy as np

from slidegrade import _purepy
from slidegrade.imaging import MAX_SQ_DISTANCE, grid_edge_weights
from slidegrade.synthdata import PRESETS, generate_slide

try:
    from slidegrade import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def run(size, repeat):
    spec = dataclasses.replace(PRESETS["desk"], seed=size)
    image, _ = generate_slide(spec)
    px = image.pixels[:size, :size]
    sq = grid_edge_weights(px)
    weights = np.sqrt(sq.astype(np.float64))
    order = _purepy.stable_argsort_bounded(sq, MAX_SQ_DISTANCE)

    rows = []
    impls = [("python", _purepy)] + ([("cython", _kernels)] if _kernels else [])
    results = {}
    for name, mod in impls:
        t_sort, o = best_of(lambda: mod.stable_argsort_bounded(sq, MAX_SQ_DISTANCE), repeat)
        t_mst, (mst, labels) = best_of(lambda: mod.kruskal_forest(size, size, order, weights, 100.0), repeat)
        results[name] = (o, mst, labels)
        rows.append((name, t_sort, t_mst))
    if "cython" in results:
        py, cy = results["python"], results["cython"]
        if not all(np.array_equal(a, b) for a, b in zip(py, cy)):
            raise SystemExit(f"kernel outputs differ at size {size}")
    return rows


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[128, 256, 512])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'pixels':>10} {'impl':>7} {'argsort ms':>11} {'kruskal ms':>11} {'speed-up':>9}")
    for size in args.sizes:
        rows = run(size, args.repeat)
        base = rows[0][1] + rows[0][2]
        for name, t_sort, t_mst in rows:
            print(
                f"{size * size:>10} {name:>7} {1e3 * t_sort:>11.2f} {1e3 * t_mst:>11.2f} "
                f"{base / (t_sort + t_mst):>8.1f}x"
            )


if __name__ == "__main__":
    main()
