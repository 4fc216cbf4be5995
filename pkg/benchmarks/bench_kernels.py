"""Compare the numba and numpy kernel backends on training-shaped inputs.

Times each hot kernel on arrays shaped like a real training batch (triples
over a MovieLens-1M-scale corpus), then one full set2box training epoch per
backend.  Run from the repository root:

    python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from set2box import kernels
from set2box.corpus import split_corpus
from set2box.datasets import ml1m_like_corpus
from set2box.model import TrainConfig, train


def bench(fn, *args, repeats=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(corpus, d, num_pairs, rng):
    """(name, args) per kernel, shaped like one 512-triple batch."""
    batch_sets = rng.choice(corpus.n_sets, size=1536, replace=False)
    members, offsets = corpus.gather(np.sort(batch_sets))
    rows = rng.normal(size=(members.size, d)).astype(np.float32)
    scores = rng.normal(size=members.size).astype(np.float32)
    weights = kernels.get_impl("segment_softmax", "numpy")(scores, offsets)
    grad_w = rng.normal(size=members.size).astype(np.float32)
    pooled = rng.normal(size=(offsets.size - 1, d)).astype(np.float32)
    idx = rng.integers(0, corpus.num_entities, size=members.size)
    out = np.zeros((corpus.num_entities, d), dtype=np.float32)
    pairs = rng.integers(0, corpus.n_sets, size=(num_pairs, 2))
    triples = rng.integers(0, corpus.n_sets, size=(512, 3))
    return [
        ("segment_sum", (rows, offsets)),
        ("repeat_rows", (pooled, offsets)),
        ("segment_softmax", (scores, offsets)),
        ("segment_softmax_bwd", (weights, grad_w, offsets)),
        ("scatter_add_rows", (out, idx, rows)),
        ("pair_intersection_sizes", (corpus.members, corpus.offsets, pairs)),
        ("triple_intersection_sizes", (corpus.members, corpus.offsets, triples)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--pairs", type=int, default=100_000)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--quick", action="store_true",
                    help="smaller corpus and a shorter epoch")
    args = ap.parse_args()

    backends = [b for b in ("numpy", "numba") if b in kernels._IMPLS]
    if len(backends) < 2:
        print("numba backend unavailable; timing numpy only")

    n_sets = 1600 if args.quick else 6038
    corpus = ml1m_like_corpus(num_sets=n_sets, seed=0)
    rng = np.random.default_rng(1)
    cases = kernel_cases(corpus, args.d, args.pairs, rng)

    print(f"corpus: {corpus.n_sets} sets, {corpus.members.size} memberships, d={args.d}")
    header = f"{'kernel':<26}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, call_args in cases:
        row = f"{name:<26}"
        per = {}
        for b in backends:
            impl = kernels.get_impl(name, b)
            fresh = tuple(a.copy() if isinstance(a, np.ndarray) else a for a in call_args)
            per[b] = bench(impl, *fresh, repeats=args.repeats)
            row += f"{per[b] * 1e3:>10.2f}ms"
        if len(backends) == 2:
            row += f"{per['numpy'] / per['numba']:>9.2f}x"
        print(row)

    print()
    epochs = 1
    config = TrainConfig(d=args.d, epochs=epochs, batch_size=512,
                         num_pos_per_set=4 if args.quick else 10,
                         num_neg_per_set=4 if args.quick else 10, seed=0)
    split = split_corpus(corpus, 0.2, seed=0)
    prev = kernels.BACKEND
    try:
        for b in backends:
            kernels.use_backend(b)
            t0 = time.perf_counter()
            train(split, config)
            print(f"set2box training epoch ({b}): {time.perf_counter() - t0:.2f}s")
    finally:
        kernels.use_backend(prev)


if __name__ == "__main__":
    main()
