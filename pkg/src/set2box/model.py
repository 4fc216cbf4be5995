"""Box embeddings of sets: pooling, the seven-ratio objective, training.

Each entity carries a center row and a raw offset row; a set's box is an
attention pool of its members' rows.  Pooling is the two-stage scheme: a
context vector scores members, the scored sum re-scores members, and the
second weighting produces the output.  Offsets go through softplus before
pooling (keeping them positive) and are scaled by |s|^(1/d) so larger sets
get larger boxes at equal pooled shape.

Training minimizes, over sampled triples, the squared gap between the seven
smoothed box-volume ratios (three sets, three pairwise intersections, one
three-way intersection, normalized by their sum) and the triple's exact
cardinality ratios.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tape, softplus_value
from .boxes import Box, graph_smooth_volume, inv_softplus, intersect, volume
from .corpus import sample_triples, triple_counts, triples_to_arrays
from .errors import ConfigError
from .io import expect_eof, expect_magic, read_f32, read_u32, write_f32, write_u32
from .measures import similarity
from .optim import ParamStore, adam_step

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"S2B1"


@dataclass
class TrainConfig:
    d: int = 32
    beta: float = 2.0
    lr: float = 0.01
    batch_size: int = 512
    epochs: int = 50
    num_pos_per_set: int = 10
    num_neg_per_set: int = 10
    seed: int = 0
    resample_each_epoch: bool = False
    ratio_mean: bool = False

    def validate(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be > 0, got {self.beta}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.num_pos_per_set < 0 or self.num_neg_per_set < 0:
            raise ConfigError("per-set triple counts must be >= 0")
        if self.num_pos_per_set + self.num_neg_per_set == 0:
            raise ConfigError("at least one triple per set is required")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_s: float = 0.0


class EntityEmbeddings:
    """Entity-level box parameters plus the two pooling context vectors."""

    PARAM_NAMES = ("q_center", "q_offset_raw", "ctx_center", "ctx_offset")

    def __init__(self, store, num_entities, d, beta):
        self.store = store
        self.num_entities = num_entities
        self.d = d
        self.beta = float(beta)

    @classmethod
    def init(cls, num_entities, d, beta, rng):
        """Fresh parameters: centers uniform in +-0.5/sqrt(d), raw offsets set
        so the transformed offsets start near 0.1, contexts like centers."""
        scale = 0.5 / np.sqrt(d)
        store = ParamStore()
        store.add("q_center", rng.uniform(-scale, scale, size=(num_entities, d)))
        target = rng.uniform(0.095, 0.105, size=(num_entities, d))
        store.add("q_offset_raw", inv_softplus(target))
        store.add("ctx_center", rng.uniform(-scale, scale, size=d))
        store.add("ctx_offset", rng.uniform(-scale, scale, size=d))
        return cls(store, num_entities, d, beta)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            write_u32(fh, self.num_entities, self.d)
            write_f32(fh, self.store["q_center"])
            write_f32(fh, self.store["q_offset_raw"])
            write_f32(fh, self.store["ctx_center"])
            write_f32(fh, self.store["ctx_offset"])
            write_f32(fh, np.float32(self.beta))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            expect_magic(fh, MODEL_MAGIC, path)
            num_entities, d = read_u32(fh, 2)
            store = ParamStore()
            store.add("q_center", read_f32(fh, (num_entities, d)))
            store.add("q_offset_raw", read_f32(fh, (num_entities, d)))
            store.add("ctx_center", read_f32(fh, (d,)))
            store.add("ctx_offset", read_f32(fh, (d,)))
            beta = float(read_f32(fh, ())[()])
            expect_eof(fh, path)
        return cls(store, int(num_entities), int(d), beta)


def scp_pool(rows, ctx):
    """Two-stage attention pool of one set's member rows (reference path).

    Stage one scores members against the context vector and softmax-pools
    them into a set summary; stage two scores members against that summary
    and the resulting weights produce the output.  The output is a convex
    combination of the rows, so it lies in their convex hull.
    """
    rows = np.asarray(rows, dtype=np.float64)
    ctx = np.asarray(ctx, dtype=np.float64)
    s1 = (rows * ctx).sum(axis=1)
    a = np.exp(s1 - s1.max())
    a /= a.sum()
    b = (a[:, None] * rows).sum(axis=0)
    s2 = (rows * b).sum(axis=1)
    w = np.exp(s2 - s2.max())
    w /= w.sum()
    return (w[:, None] * rows).sum(axis=0)


def _pool_batch(rows, ctx, offsets):
    """Kernel-backed batched pooling over CSR segments (no tape)."""
    s1 = (rows * ctx).sum(axis=1)
    a = kernels.segment_softmax(s1, offsets)
    b = kernels.segment_sum(rows * a[:, None], offsets)
    s2 = (rows * kernels.repeat_rows(b, offsets)).sum(axis=1)
    w = kernels.segment_softmax(s2, offsets)
    return kernels.segment_sum(rows * w[:, None], offsets)


def embed_sets(emb, corpus, set_ids=None, chunk=4096):
    """Boxes for the listed sets (all sets by default): (centers, offsets).

    Pure-numpy inference path used by evaluation and serialization; always
    float32, chunked to bound the gathered-row temporaries.
    """
    if set_ids is None:
        set_ids = np.arange(corpus.n_sets, dtype=np.int64)
    set_ids = np.asarray(set_ids, dtype=np.int64)
    d = emb.d
    qc = emb.store["q_center"]
    qf = emb.store["q_offset_raw"]
    cc = emb.store["ctx_center"]
    cf = emb.store["ctx_offset"]
    centers = np.empty((set_ids.size, d), dtype=np.float32)
    offsets_out = np.empty((set_ids.size, d), dtype=np.float32)
    inv_d = np.float32(1.0 / d)
    for lo in range(0, set_ids.size, chunk):
        ids = set_ids[lo:lo + chunk]
        members, offs = corpus.gather(ids)
        rows_c = qc[members]
        centers[lo:lo + ids.size] = _pool_batch(rows_c, cc, offs)
        rows_f = softplus_value(qf[members], 1.0)
        pooled = _pool_batch(rows_f, cf, offs)
        scale = np.diff(offs).astype(np.float32) ** inv_d
        offsets_out[lo:lo + ids.size] = pooled * scale[:, None]
    return centers, offsets_out


def embed_set(emb, corpus, set_id):
    """One set's box with the non-negative-offset invariant guaranteed."""
    c, f = embed_sets(emb, corpus, np.array([set_id]))
    return Box(c[0], f[0])


def graph_scp(rows, offsets, ctx):
    """Tape twin of the two-stage pool over CSR segments (one fused node)."""
    return ad.scp_pool(rows, offsets, ctx)


def graph_embed_sets(leaves, corpus, set_ids):
    """Boxes for ``set_ids`` as tape Nodes: (centers (U, d), offsets (U, d))."""
    members, offsets = corpus.gather(set_ids)
    qc = leaves["q_center"]
    dtype = qc.value.dtype
    d = qc.value.shape[1]
    centers = graph_scp(ad.take(qc, members), offsets, leaves["ctx_center"])
    rows_f = ad.softplus(ad.take(leaves["q_offset_raw"], members), 1.0)
    pooled = graph_scp(rows_f, offsets, leaves["ctx_offset"])
    scale = (np.diff(offsets).astype(dtype) ** dtype.type(1.0 / d))[:, None]
    return centers, pooled * scale


def graph_triple_ratio_loss(slots, ratios, beta, ratio_mean=False):
    """Per-triple squared gap between volume ratios and exact ratios.

    ``slots`` holds three (center, offset) Node pairs of shape (B, d) in
    triple order; ``ratios`` is the (B, 7) exact-cardinality ratio table.
    Returns the (B,) loss vector: sum over the seven outcomes of
    (ratio - volume_ratio)^2, or the mean when ``ratio_mean`` is set.
    """
    mins = [c - f for c, f in slots]
    maxs = [c + f for c, f in slots]
    vols = [graph_smooth_volume(mins[s], maxs[s], beta) for s in range(3)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        mi = ad.maximum(mins[a], mins[b])
        ma = ad.minimum(maxs[a], maxs[b])
        vols.append(graph_smooth_volume(mi, ma, beta))
    m3 = ad.maximum(ad.maximum(mins[0], mins[1]), mins[2])
    ma3 = ad.minimum(ad.minimum(maxs[0], maxs[1]), maxs[2])
    vols.append(graph_smooth_volume(m3, ma3, beta))
    z = vols[0]
    for v in vols[1:]:
        z = z + v
    ratios = np.asarray(ratios)
    total = None
    for ell in range(7):
        diff = vols[ell] / z - ratios[:, ell]
        sq = diff * diff
        total = sq if total is None else total + sq
    if ratio_mean:
        total = total * (1.0 / 7.0)
    return total


def ratio_table(corpus, triple_ids, dtype=np.float32):
    """Exact cardinality ratio rows for an (n, 3) triple id array."""
    counts = triple_counts(corpus, triple_ids).astype(np.float64)
    return (counts / counts.sum(axis=1, keepdims=True)).astype(dtype)


def graph_batch_loss(leaves, corpus, batch_ids, batch_ratios, beta, ratio_mean=False,
                     slot_boxes=None):
    """Mean triple loss of one batch, embedding each unique set once.

    ``slot_boxes`` lets callers substitute their own (centers, offsets) Node
    pair for the unique sets (the quantized trainer passes reconstructions).
    """
    uniq, inv = np.unique(batch_ids, return_inverse=True)
    inv = inv.reshape(-1, 3)
    if slot_boxes is None:
        centers, offsets = graph_embed_sets(leaves, corpus, uniq)
    else:
        centers, offsets = slot_boxes
    slots = [
        (ad.take(centers, inv[:, s]), ad.take(offsets, inv[:, s])) for s in range(3)
    ]
    per_triple = graph_triple_ratio_loss(slots, batch_ratios, beta, ratio_mean)
    return ad.mean(per_triple)


def triple_loss(emb, corpus, triple, profile=None, ratio_mean=False):
    """Loss of a single triple under the current embeddings (a float)."""
    ids = np.asarray(triple, dtype=np.int64).reshape(1, 3)
    if profile is not None:
        ratios = np.asarray(profile.ratios, dtype=np.float32).reshape(1, 7)
    else:
        ratios = ratio_table(corpus, ids)
    tape = Tape()
    leaves = emb.store.leaves(tape)
    loss = graph_batch_loss(leaves, corpus, ids, ratios, emb.beta, ratio_mean)
    return float(loss.value)


def train(corpus, config, emb=None, progress=None):
    """Minibatch Adam over sampled triples; returns (embeddings, history).

    Deterministic for a given seed: initialization, sampling, and shuffling
    all derive from it.  Zero epochs returns the initialized embeddings
    unchanged.  Non-finite losses or gradients raise TrainingDiverged.
    """
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    s_init, s_sample, s_shuffle = ss.spawn(3)
    if emb is None:
        emb = EntityEmbeddings.init(
            corpus.num_entities, config.d, config.beta, np.random.default_rng(s_init)
        )
    triples = sample_triples(
        corpus, config.num_pos_per_set, config.num_neg_per_set, s_sample
    )
    if not triples:
        raise ConfigError("no training triples could be sampled")
    ids, _ = triples_to_arrays(triples)
    ratios = ratio_table(corpus, ids)
    shuffle_rng = np.random.default_rng(s_shuffle)
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if config.resample_each_epoch and epoch > 0:
            triples = sample_triples(
                corpus, config.num_pos_per_set, config.num_neg_per_set, s_sample.spawn(1)[0]
            )
            ids, _ = triples_to_arrays(triples)
            ratios = ratio_table(corpus, ids)
        perm = shuffle_rng.permutation(ids.shape[0])
        total = 0.0
        for lo in range(0, perm.size, config.batch_size):
            batch = perm[lo:lo + config.batch_size]
            tape = Tape()
            leaves = emb.store.leaves(tape)
            loss = graph_batch_loss(
                leaves, corpus, ids[batch], ratios[batch], config.beta, config.ratio_mean
            )
            tape.backward(loss)
            grads = {k: n.grad for k, n in leaves.items() if n.grad is not None}
            adam_step(emb.store, grads, config.lr)
            total += float(loss.value) * batch.size
            tape.release()
        stats = EpochStats(epoch, total / perm.size, time.perf_counter() - t0)
        history.append(stats)
        logger.info("epoch %d mean triple loss %.6f (%.2fs)", epoch, stats.mean_loss, stats.wall_s)
        if progress is not None:
            progress(stats)
    return emb, history


def estimate_similarity(box_a, box_b, measure, beta):
    """Similarity estimate from two boxes' (smoothed) volumes.

    beta=None uses hard volumes; otherwise all three volumes are smoothed at
    the given temperature, matching how the boxes were trained.
    """
    ma, mb = box_a.mins, box_b.mins
    xa, xb = box_a.maxs, box_b.maxs
    mi, ma_i = intersect(ma, xa, mb, xb)
    vi = volume(mi, ma_i, beta)
    va = volume(ma, xa, beta)
    vb = volume(mb, xb, beta)
    return float(similarity(vi, va, vb, measure))


def pair_volumes(centers, offsets, pairs, beta):
    """(v_a, v_b, v_inter) for each id pair over per-set box tables.

    beta=None computes hard volumes.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    c_a, f_a = centers[pairs[:, 0]], offsets[pairs[:, 0]]
    c_b, f_b = centers[pairs[:, 1]], offsets[pairs[:, 1]]
    mins_a, maxs_a = c_a - f_a, c_a + f_a
    mins_b, maxs_b = c_b - f_b, c_b + f_b
    mi = np.maximum(mins_a, mins_b)
    ma = np.minimum(maxs_a, maxs_b)
    va = volume(mins_a, maxs_a, beta)
    vb = volume(mins_b, maxs_b, beta)
    vi = volume(mi, ma, beta)
    return va, vb, vi
