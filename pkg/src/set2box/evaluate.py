"""Held-out evaluation: pairwise MSE, top-k neighbor quality, timing probes.

A representation is anything with a `measures` tuple and an
`estimate(ids_a, ids_b, measure)` method returning raw (unclamped)
similarity estimates for aligned set-id arrays.  MSE clamps estimates to
[0, 1] first (smoothed volume ratios can exceed 1); ranking uses the raw
values so order is preserved past the clamp.
"""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import bin_estimates, order_join, order_meet, order_volume
from .corpus import SPLIT_NAMES
from .errors import ConfigError
from .kernels import one_vs_many_intersection_sizes, pair_intersection_sizes
from .measures import MEASURES, canonical_measure, similarity
from .model import pair_volumes


class ExactRepr:
    """Brute-force oracle: estimates are the exact similarities."""

    measures = MEASURES

    def __init__(self, corpus):
        self.corpus = corpus

    def estimate(self, ids_a, ids_b, measure):
        ids_a = np.asarray(ids_a, dtype=np.int64)
        ids_b = np.asarray(ids_b, dtype=np.int64)
        pairs = np.stack([ids_a, ids_b], axis=1)
        inter = pair_intersection_sizes(self.corpus.members, self.corpus.offsets, pairs)
        sa = self.corpus.sizes[ids_a]
        sb = self.corpus.sizes[ids_b]
        return similarity(inter, sa, sb, measure)


class BoxRepr:
    """Per-set box tables; all four measures from volumes.

    beta is the training temperature (None evaluates hard volumes); JI uses
    the inclusion-exclusion union.
    """

    measures = MEASURES

    def __init__(self, centers, offsets, beta):
        self.centers = np.asarray(centers)
        self.offsets = np.asarray(offsets)
        self.beta = beta

    @classmethod
    def from_model(cls, emb, corpus, set_ids=None):
        from .model import embed_sets

        centers, offsets = embed_sets(emb, corpus, set_ids)
        return cls(centers, offsets, emb.beta)

    @classmethod
    def from_codebook(cls, codebook, codes, beta):
        from .quantize import reconstruct

        centers, offsets = reconstruct(codes, codebook)
        return cls(centers, offsets, beta)

    @classmethod
    def from_pq(cls, codebooks, codes_c, codes_f, beta):
        from .baselines import pq_reconstruct

        centers, offsets = pq_reconstruct(codes_c, codes_f, codebooks)
        return cls(centers, offsets, beta)

    def estimate(self, ids_a, ids_b, measure):
        pairs = np.stack(
            [np.asarray(ids_a, dtype=np.int64), np.asarray(ids_b, dtype=np.int64)],
            axis=1,
        )
        va, vb, vi = pair_volumes(self.centers, self.offsets, pairs, self.beta)
        va = va.astype(np.float64)
        vb = vb.astype(np.float64)
        vi = vi.astype(np.float64)
        return similarity(vi, va, vb, measure, union=va + vb - vi)


class BinRepr:
    """Packed hash sketches; popcount arithmetic for all four measures."""

    measures = MEASURES

    def __init__(self, sketches, d):
        self.sketches = np.asarray(sketches, dtype=np.uint8)
        self.d = int(d)
        self.zero_flagged = 0

    def estimate(self, ids_a, ids_b, measure):
        est, ok = bin_estimates(
            self.sketches[np.asarray(ids_a, dtype=np.int64)],
            self.sketches[np.asarray(ids_b, dtype=np.int64)],
            measure,
        )
        self.zero_flagged += int((~ok).sum())
        return est


class VecRepr:
    """Pooled set vectors; inner product approximates one trained measure."""

    def __init__(self, vectors, measure):
        self.vectors = np.asarray(vectors)
        self.measure = canonical_measure(measure)
        self.measures = (self.measure,)

    def estimate(self, ids_a, ids_b, measure):
        if canonical_measure(measure) != self.measure:
            raise ConfigError(
                f"vector model was trained for {self.measure!r}, not {measure!r}"
            )
        za = self.vectors[np.asarray(ids_a, dtype=np.int64)].astype(np.float64)
        zb = self.vectors[np.asarray(ids_b, dtype=np.int64)].astype(np.float64)
        return (za * zb).sum(axis=1)


class OrderRepr:
    """Non-negative order vectors; volumes exp(-sum z), meet=max, join=min."""

    measures = MEASURES

    def __init__(self, z):
        self.z = np.asarray(z)

    def estimate(self, ids_a, ids_b, measure):
        za = self.z[np.asarray(ids_a, dtype=np.int64)].astype(np.float64)
        zb = self.z[np.asarray(ids_b, dtype=np.int64)].astype(np.float64)
        va = order_volume(za)
        vb = order_volume(zb)
        vi = order_volume(order_meet(za, zb))
        vu = order_volume(order_join(za, zb))
        return similarity(vi, va, vb, measure, union=vu)


@dataclass
class EvalReport:
    """One method's held-out evaluation; cost, quality, and timing columns
    are filled by the orchestration layer when requested."""

    method: str
    split: str
    mse: dict
    pairs: int
    seed: int
    bits_real: float = None
    bits_packed: int = None
    quality: dict = field(default_factory=dict)  # measure -> {k: quality}
    timings: "TimingTable" = None


def _split_ids(corpus, split):
    if split is None:
        return np.arange(corpus.n_sets, dtype=np.int64)
    if split not in SPLIT_NAMES:
        raise ConfigError(f"unknown split {split!r}")
    return corpus.ids_in_split(split)


def sample_eval_pairs(num_candidates, num_pairs, seed):
    """Uniform ordered pairs of distinct indices in [0, num_candidates)."""
    if num_candidates < 2:
        raise ConfigError("need at least 2 sets to sample pairs")
    rng = np.random.default_rng(seed)
    a = rng.integers(0, num_candidates, size=num_pairs)
    b = rng.integers(0, num_candidates, size=num_pairs)
    clash = a == b
    while clash.any():
        b[clash] = rng.integers(0, num_candidates, size=int(clash.sum()))
        clash = a == b
    return a, b


def mse_eval(corpus, representation, split="test", num_pairs=100_000, seed=0,
             measures=None, method=""):
    """Mean squared error of clamped estimates against exact similarities
    over uniformly sampled distinct pairs of one split."""
    ids = _split_ids(corpus, split)
    a, b = sample_eval_pairs(ids.size, num_pairs, seed)
    ids_a, ids_b = ids[a], ids[b]
    inter = pair_intersection_sizes(
        corpus.members, corpus.offsets, np.stack([ids_a, ids_b], axis=1)
    )
    sa = corpus.sizes[ids_a]
    sb = corpus.sizes[ids_b]
    if measures is None:
        measures = representation.measures
    out = {}
    for m in measures:
        m = canonical_measure(m)
        exact = similarity(inter, sa, sb, m)
        est = np.clip(representation.estimate(ids_a, ids_b, m), 0.0, 1.0)
        out[m] = float(np.mean((est - exact) ** 2))
    return EvalReport(method=method, split=split, mse=out, pairs=num_pairs, seed=seed)


@dataclass
class QualityResult:
    quality: float
    k: int
    measure: str
    num_anchors: int
    num_skipped: int
    seed: int


def quality_at_k(corpus, representation, split="test", k=10, num_anchors=500,
                 seed=0, measure="ji"):
    """Mean ratio of retrieved-neighbor true similarity to ideal top-k.

    For each anchor the exact top-k over the split (excluding the anchor) is
    the denominator's neighbor set and the representation's top-k the
    numerator's; both rankings break ties by ascending set id.  Anchors whose
    ideal top-k has zero total similarity are skipped and counted.
    """
    measure = canonical_measure(measure)
    ids = _split_ids(corpus, split)
    n = ids.size
    if not 0 < k < n:
        raise ConfigError(f"need 0 < k < split size ({n}), got {k}")
    rng = np.random.default_rng(seed)
    take = min(num_anchors, n)
    anchors = rng.choice(n, size=take, replace=False)
    g_members, g_offsets = corpus.gather(ids)
    sizes = corpus.sizes
    total = 0.0
    skipped = 0
    for pos in anchors:
        anchor_id = ids[pos]
        lo, hi = corpus.offsets[anchor_id], corpus.offsets[anchor_id + 1]
        inter_all = one_vs_many_intersection_sizes(
            corpus.members[lo:hi], g_members, g_offsets
        )
        others = np.delete(ids, pos)
        inter = np.delete(inter_all, pos)
        true_sims = similarity(inter, sizes[anchor_id], sizes[others], measure)
        est = np.asarray(
            representation.estimate(np.full(others.size, anchor_id), others, measure)
        )
        # primary key: similarity descending; tie-break: set id ascending
        true_top = np.lexsort((others, -true_sims))[:k]
        est_top = np.lexsort((others, -est))[:k]
        denom = float(true_sims[true_top].sum())
        if denom <= 0.0:
            skipped += 1
            continue
        q = float(true_sims[est_top].sum()) / denom
        if q > 1.0 + 1e-9:
            raise AssertionError("estimated top-k outscored the exact top-k")
        total += min(q, 1.0)
    evaluated = take - skipped
    mean_q = total / evaluated if evaluated else 0.0
    return QualityResult(mean_q, k, measure, evaluated, skipped, seed)


@dataclass
class TimingTable:
    """Median per-pair estimation latency by underlying set size."""

    rows: list  # (size, seconds per pair)

    def ratio(self):
        times = [t for _, t in self.rows]
        return max(times) / min(times)


def timing_probe(representation, corpus, sizes=(10, 100, 1000), measure="ji",
                 pairs=4096, repeats=5, seed=0):
    """Median per-pair latency of batched estimation, per set size.

    Pairs are drawn among sets whose size equals each grid entry, so the
    probe corpus must hold at least two sets of every listed size.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for s in sizes:
        pool = np.flatnonzero(corpus.sizes == s)
        if pool.size < 2:
            raise ConfigError(f"corpus has {pool.size} sets of size {s}; need >= 2")
        a, b = sample_eval_pairs(pool.size, pairs, rng.integers(1 << 31))
        ids_a, ids_b = pool[a], pool[b]
        representation.estimate(ids_a, ids_b, measure)  # warm-up
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            representation.estimate(ids_a, ids_b, measure)
            times.append(time.perf_counter() - t0)
        rows.append((int(s), float(np.median(times)) / pairs))
    return TimingTable(rows)


EVAL_CSV_HEADER = ["method", "measure", "mse", "bits_real", "bits_packed", "pairs", "seed"]
QUALITY_CSV_HEADER = ["method", "k", "quality"]


def write_eval_csv(path, reports):
    """One row per (report, measure); floats via repr so reloads are exact."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_CSV_HEADER)
        for rep in reports:
            for m in MEASURES:
                if m not in rep.mse:
                    continue
                w.writerow([
                    rep.method,
                    m,
                    repr(rep.mse[m]),
                    "" if rep.bits_real is None else repr(float(rep.bits_real)),
                    "" if rep.bits_packed is None else int(rep.bits_packed),
                    rep.pairs,
                    rep.seed,
                ])


def read_eval_csv(path):
    """Rows as dicts with numeric fields parsed back losslessly."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != EVAL_CSV_HEADER:
            raise ConfigError(f"{path}: unexpected eval CSV header {header}")
        out = []
        for row in r:
            out.append({
                "method": row[0],
                "measure": row[1],
                "mse": float(row[2]),
                "bits_real": None if row[3] == "" else float(row[3]),
                "bits_packed": None if row[4] == "" else int(row[4]),
                "pairs": int(row[5]),
                "seed": int(row[6]),
            })
    return out


def write_quality_csv(path, rows):
    """rows: iterable of (method, QualityResult)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUALITY_CSV_HEADER)
        for method, res in rows:
            w.writerow([method, res.k, repr(res.quality)])


def read_quality_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != QUALITY_CSV_HEADER:
            raise ConfigError(f"{path}: unexpected quality CSV header {header}")
        return [
            {"method": row[0], "k": int(row[1]), "quality": float(row[2])}
            for row in r
        ]
