"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from visu.charfeat import AlignmentBatch, build_index_sets, normalize_features
from visu.kernels import backends


def alignment_case(n=96, dim=64, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(classes, size=n)
    batch = normalize_features(AlignmentBatch(
        rng.normal(size=(n, dim)), rng.normal(size=(n, dim)), labels,
        np.where(rng.random(n) < 0.8, 1.0, rng.random(n)), np.ones(n, dtype=bool), 1, n,
    ))
    sets = build_index_sets(batch, 0.7)
    return batch.features_a, batch.features_b, sets


def raster_case(k=60, h=32, w=100, seed=0):
    rng = np.random.default_rng(seed)
    segs = np.column_stack([rng.uniform(0, w, k), rng.uniform(0, h, k), rng.uniform(0, w, k), rng.uniform(0, h, k)])
    return segs


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    a = ap.parse_args()
    fa, fb, sets = alignment_case()
    segs = raster_case()
    cases = {
        "cua_kernel (n=96, D=64)": lambda m: m.cua_kernel(fa, fb, sets.pos, sets.pos_excl, sets.neg, 0.1),
        "cc_kernel  (n=96, D=64)": lambda m: m.cc_kernel(fa, fb, sets.pos_excl, sets.neg, 0.1),
        "raster     (60 segs, 100x32)": lambda m: m.raster_segments(segs, 1.2, 32, 100),
    }
    mods = backends()
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name in mods) + "   speedup")
    for label, fn in cases.items():
        times = {}
        for name, mod in mods.items():
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=a.repeat)) * 1e3
        row = f"{label:32s}" + "".join(f"{times[n]:>11.3f} ms" for n in mods)
        if "compiled" in times:
            row += f"   {times['python'] / times['compiled']:.1f}x"
        print(row)


if __name__ == "__main__":
    main()
