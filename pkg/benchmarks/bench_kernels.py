"""Compare the compiled and pure-Python similarity kernels.

    python benchmarks/bench_kernels.py [--batch 128 256 512] [--repeat 3]

Each challenger step scores one batch: B*(B-1) directed BLEU evaluations for
the distance matrix, then average linkage over the B x B result.
"""

import argparse
import time

import numpy as np

from coevolve import _kernels_py
from coevolve.backends.toy import ToyWorld
from coevolve.similarity import encode_batch, tokenize

try:
    from coevolve import _kernels
except ImportError:
    _kernels = None


def toy_batch(size, seed=0):
    world = ToyWorld(procedures_per_level=(2, 3, 5, 8), solver_skill=(1.0, 0.5, 0.0, -0.5))
    rng = np.random.default_rng(seed)
    levels = rng.integers(0, world.levels, size)
    return [tokenize(world.render(int(k), rng.integers(2, 99, 3)).text) for k in levels]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[64, 128, 256, 512])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    impls = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels else [])
    if _kernels is None:
        print("compiled kernel not built; timing the fallback only")
    print(f"{'B':>5} {'kernel':>7} {'distances s':>12} {'linkage s':>10} {'speedup':>8}")
    for size in args.batch:
        flat, off = encode_batch(toy_batch(size))
        base = None
        results = {}
        for name, mod in impls:
            t_dist, dist = best_of(lambda: mod.distance_matrix(flat, off, 4, 0.1), args.repeat)
            t_link, labels = best_of(lambda: mod.average_linkage(dist, 0.5), args.repeat)
            results[name] = (dist, labels)
            total = t_dist + t_link
            base = base or total
            print(f"{size:>5} {name:>7} {t_dist:>12.4f} {t_link:>10.4f} {base / total:>7.1f}x")
        if len(results) == 2:
            (d1, l1), (d2, l2) = results.values()
            assert np.array_equal(d1, d2) and np.array_equal(l1, l2), "kernels disagree"


if __name__ == "__main__":
    main()
