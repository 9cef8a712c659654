"""Benchmark the compiled region-counting kernel against the numpy fallback.

The kernel runs once per face per epoch in dataloader workers, so its
throughput bounds how fast masks can be served to a large pretraining run.

    python3 benchmarks/bench_kernels.py [--size 224] [--patch 16] [--reps 300]
"""

import argparse
import time

import numpy as np

from facemim._kernels import fallback
from facemim.masking import MaskConfig, sample_mask
from facemim.parsing import ParsingMap
from facemim.regions import patchify_regions
from facemim.synth import make_face_labels
from facemim.taxonomy import default_taxonomy

try:
    from facemim._kernels import _region_counts

    compiled = _region_counts.patch_region_counts
except ImportError:
    compiled = None


def bench(fn, maps, lookup, patch, n_coarse, reps):
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for i in range(reps):
            fn(maps[i % len(maps)], lookup, patch, n_coarse)
        best = min(best, time.perf_counter() - t0)
    return reps / best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=224)
    ap.add_argument("--patch", type=int, default=16)
    ap.add_argument("--reps", type=int, default=300)
    args = ap.parse_args()

    taxonomy = default_taxonomy()
    lookup = taxonomy.lookup_table()
    rng = np.random.Generator(np.random.Philox(0))
    maps = [make_face_labels(args.size, args.patch, rng) for _ in range(8)]

    print(f"region counting on {args.size}x{args.size} maps, patch {args.patch}:")
    py = bench(fallback.patch_region_counts, maps, lookup, args.patch, taxonomy.n_coarse, args.reps)
    print(f"  numpy fallback : {py:9.1f} maps/s")
    if compiled is None:
        print("  compiled       : extension not built")
    else:
        cy = bench(compiled, maps, lookup, args.patch, taxonomy.n_coarse, args.reps)
        print(f"  compiled       : {cy:9.1f} maps/s  ({cy / py:.2f}x)")
        ref = fallback.patch_region_counts(maps[0], lookup, args.patch, taxonomy.n_coarse)
        got = compiled(maps[0], lookup, args.patch, taxonomy.n_coarse)
        assert (ref == got).all(), "backends disagree"

    # end-to-end: table construction + one mask sample per map
    t0 = time.perf_counter()
    for i in range(args.reps):
        table = patchify_regions(ParsingMap(labels=maps[i % len(maps)]), args.patch)
        sample_mask(table, MaskConfig("crfr_p", 0.75, seed=i))
    rate = args.reps / (time.perf_counter() - t0)
    print(f"  table + crfr_p : {rate:9.1f} samples/s (active backend)")


if __name__ == "__main__":
    main()
