"""Box quantization: key-box codebooks, discrete codes, and joint training.

The d box dimensions are split into D equal subspaces; each subspace owns K
learnable key boxes.  A set's sub-box is assigned the key with the highest
smoothed overlap ratio against it, and the reconstruction concatenates the
chosen keys' centers and offsets.  Training is end to end: the forward pass
uses the hard reconstruction while gradients flow through the
softmax-relaxed key mixture, and the loss combines the original-box triple
objective with every original/reconstructed substitution pattern.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, softplus_value
from .boxes import bor, graph_bor, inv_softplus
from .corpus import sample_triples, triples_to_arrays
from .errors import ArtifactError, ConfigError
from .io import (
    code_width,
    expect_eof,
    expect_magic,
    pack_codes,
    read_f32,
    read_u32,
    unpack_codes,
    write_f32,
    write_u32,
)
from .model import (
    EntityEmbeddings,
    EpochStats,
    TrainConfig,
    embed_sets,
    graph_embed_sets,
    graph_triple_ratio_loss,
    ratio_table,
)
from .optim import adam_step

logger = logging.getLogger(__name__)

CODEBOOK_MAGIC = b"S2BQ"


@dataclass
class QuantTrainConfig(TrainConfig):
    num_subspaces: int = 16
    num_keys: int = 30
    lam: float = 0.01
    tau: float = 1.0

    def validate(self):
        super().validate()
        if self.num_subspaces < 1 or self.d % self.num_subspaces != 0:
            raise ConfigError(
                f"num_subspaces must divide d ({self.d}), got {self.num_subspaces}"
            )
        if self.num_keys < 1:
            raise ConfigError(f"num_keys must be >= 1, got {self.num_keys}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")


class Codebook:
    """Key boxes per subspace: centers (D, K, d/D) and raw offsets alike."""

    def __init__(self, centers, offsets_raw, d):
        self.centers = np.asarray(centers, dtype=np.float32)
        self.offsets_raw = np.asarray(offsets_raw, dtype=np.float32)
        if self.centers.shape != self.offsets_raw.shape or self.centers.ndim != 3:
            raise ConfigError("codebook arrays must share a (D, K, subdim) shape")
        self.d = int(d)
        if self.num_subspaces * self.subdim != self.d:
            raise ConfigError("codebook shape inconsistent with d")

    @property
    def num_subspaces(self):
        return self.centers.shape[0]

    @property
    def num_keys(self):
        return self.centers.shape[1]

    @property
    def subdim(self):
        return self.centers.shape[2]

    def key_offsets(self):
        return softplus_value(self.offsets_raw, 1.0)


def _split_subspaces(arr, D):
    n, d = arr.shape
    return arr.reshape(n, D, d // D)


def _sub_bounds(centers, offsets, D):
    c = _split_subspaces(centers, D)
    f = _split_subspaces(offsets, D)
    return c - f, c + f


def bor_scores(centers, offsets, codebook, beta):
    """Smoothed overlap ratio of every sub-box against every key: (n, D, K)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float32))
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float32))
    D = codebook.num_subspaces
    mins_s, maxs_s = _sub_bounds(centers, offsets, D)
    kc = codebook.centers
    kf = codebook.key_offsets()
    kmin, kmax = kc - kf, kc + kf
    return bor(
        mins_s[:, :, None, :],
        maxs_s[:, :, None, :],
        kmin[None],
        kmax[None],
        beta,
    )


def discretize(centers, offsets, codebook, beta):
    """Per-subspace code of the best-overlap key; ties take the lowest index.

    Accepts one box (d,) or a table (n, d); returns (D,) or (n, D) int64.
    """
    single = np.asarray(centers).ndim == 1
    scores = bor_scores(centers, offsets, codebook, beta)
    codes = scores.argmax(axis=2).astype(np.int64)
    return codes[0] if single else codes


def soft_assign(centers, offsets, codebook, beta, tau):
    """Softmax-relaxed assignment weights over keys: (n, D, K), rows sum 1."""
    single = np.asarray(centers).ndim == 1
    scores = bor_scores(centers, offsets, codebook, beta) / tau
    m = scores.max(axis=2, keepdims=True)
    e = np.exp(scores - m)
    w = e / e.sum(axis=2, keepdims=True)
    return w[0] if single else w


def reconstruct(codes, codebook):
    """Concatenate the coded keys back into full boxes: (centers, offsets)."""
    codes = np.asarray(codes, dtype=np.int64)
    single = codes.ndim == 1
    codes = np.atleast_2d(codes)
    n, D = codes.shape
    if D != codebook.num_subspaces:
        raise ArtifactError("code table width does not match codebook")
    if codes.size and (codes.min() < 0 or codes.max() >= codebook.num_keys):
        raise ArtifactError("code out of range for codebook keys")
    sub = np.arange(D)
    c = codebook.centers[sub, codes]            # (n, D, subdim)
    f = codebook.key_offsets()[sub, codes]
    c = c.reshape(n, codebook.d)
    f = f.reshape(n, codebook.d)
    return (c[0], f[0]) if single else (c, f)


def graph_st_reconstruct(centers, offsets, cb_leaves, beta, tau, codebook_shape,
                         soft_forward=False):
    """Straight-through reconstruction on the tape.

    Forward values are exactly the hard reconstruction of the argmax codes;
    gradients flow through the tau-tempered soft key mixture, reaching both
    the boxes (via the overlap scores) and the key parameters.  Returns
    (centers_node, offsets_node, codes).

    ``soft_forward`` skips the hard override and forwards the soft mixture
    itself; that variant is an ordinary differentiable function, which is
    what finite-difference gradient checks probe.
    """
    D, K, subdim = codebook_shape
    n = centers.value.shape[0]
    d = centers.value.shape[1]
    c_sub = ad.reshape(centers, (n, D, 1, subdim))
    f_sub = ad.reshape(offsets, (n, D, 1, subdim))
    kc = cb_leaves["key_centers"]
    kf = ad.softplus(cb_leaves["key_offsets_raw"], 1.0)
    scores = graph_bor(c_sub - f_sub, c_sub + f_sub, kc - kf, kc + kf, beta)  # (n, D, K)
    weights = ad.softmax(scores * (1.0 / tau), axis=-1)
    w4 = ad.reshape(weights, (n, D, K, 1))
    soft_c = ad.reshape(ad.sum_(w4 * kc, axis=2), (n, d))
    soft_f = ad.reshape(ad.sum_(w4 * kf, axis=2), (n, d))

    codes = scores.value.argmax(axis=2).astype(np.int64)
    if soft_forward:
        return soft_c, soft_f, codes
    live = Codebook(kc.value, cb_leaves["key_offsets_raw"].value, d)
    hard_c, hard_f = reconstruct(codes, live)
    return (
        ad.straight_through(hard_c, soft_c),
        ad.straight_through(hard_f, soft_f),
        codes,
    )


# the eight substitution patterns: True marks a reconstructed slot, in the
# fixed order (none), i, j, k, ij, ik, jk, all
JOINT_PATTERNS = (
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (False, False, True),
    (True, True, False),
    (True, False, True),
    (False, True, True),
    (True, True, True),
)


def graph_joint_loss(leaves, corpus, batch_ids, batch_ratios, config, soft_forward=False):
    """lam * (J_1 + ... + J_7) + J_8 over one batch.

    J_1 uses original boxes in all three slots, J_8 reconstructed boxes in
    all three; the middle six substitute each non-empty proper subset of
    slots, in `JOINT_PATTERNS` order.  ``soft_forward`` swaps the
    straight-through reconstructions for their soft relaxations (see
    `graph_st_reconstruct`).
    """
    uniq, inv = np.unique(batch_ids, return_inverse=True)
    inv = inv.reshape(-1, 3)
    centers, offsets = graph_embed_sets(leaves, corpus, uniq)
    rc, rf, _ = graph_st_reconstruct(
        centers,
        offsets,
        leaves,
        config.beta,
        config.tau,
        (config.num_subspaces, config.num_keys, config.d // config.num_subspaces),
        soft_forward=soft_forward,
    )
    variants = {False: (centers, offsets), True: (rc, rf)}
    patterns = JOINT_PATTERNS if config.lam > 0 else JOINT_PATTERNS[-1:]
    total = None
    for pattern in patterns:
        slots = [
            (
                ad.take(variants[pattern[s]][0], inv[:, s]),
                ad.take(variants[pattern[s]][1], inv[:, s]),
            )
            for s in range(3)
        ]
        j = ad.mean(graph_triple_ratio_loss(slots, batch_ratios, config.beta, config.ratio_mean))
        if not all(pattern):
            j = j * config.lam
        total = j if total is None else total + j
    return total


def init_codebook(emb, corpus, config, rng, sample_size=1000):
    """Seed key boxes from the data: centers by distance-spread sampling over
    a train-set sub-box sample, offsets at the sample's per-dim median."""
    train_ids = corpus.ids_in_split("train")
    if train_ids.size > sample_size:
        take = rng.choice(train_ids.size, size=sample_size, replace=False)
        train_ids = train_ids[np.sort(take)]
    centers, offsets = embed_sets(emb, corpus, train_ids)
    D, K = config.num_subspaces, config.num_keys
    c_sub = _split_subspaces(centers.astype(np.float64), D)
    f_sub = _split_subspaces(offsets.astype(np.float64), D)
    key_c = np.empty((D, K, config.d // D), dtype=np.float64)
    key_f_raw = np.empty_like(key_c)
    for i in range(D):
        key_c[i] = _kmeanspp_seed(c_sub[:, i, :], K, rng)
        med = np.median(f_sub[:, i, :], axis=0)
        key_f_raw[i] = inv_softplus(np.maximum(med, 1e-4))
    return Codebook(key_c, key_f_raw, config.d)


def _kmeanspp_seed(points, k, rng):
    """Distance-squared-weighted seeding; reuses jittered points when k
    exceeds the pool."""
    n = points.shape[0]
    if n == 0:
        raise ConfigError("cannot seed a codebook from an empty sample")
    out = np.empty((k, points.shape[1]), dtype=np.float64)
    out[0] = points[rng.integers(n)]
    d2 = ((points - out[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = points[rng.integers(n)] + rng.normal(0, 1e-3, size=points.shape[1])
        else:
            pick = points[rng.choice(n, p=d2 / total)]
        out[j] = pick
        d2 = np.minimum(d2, ((points - pick) ** 2).sum(axis=1))
    return out


def train_quantized(corpus, config, progress=None):
    """End-to-end training of embeddings plus key boxes.

    Returns (embeddings, codebook, history).  Inference-side artifacts are
    the codebook and per-set codes from `discretize`; original boxes are not
    part of the deliverable representation.
    """
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    s_init, s_sample, s_shuffle, s_keys = ss.spawn(4)
    emb = EntityEmbeddings.init(
        corpus.num_entities, config.d, config.beta, np.random.default_rng(s_init)
    )
    codebook = init_codebook(emb, corpus, config, np.random.default_rng(s_keys))
    emb.store.add("key_centers", codebook.centers)
    emb.store.add("key_offsets_raw", codebook.offsets_raw)

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
            loss = graph_joint_loss(leaves, corpus, ids[batch], ratios[batch], config)
            tape.backward(loss)
            grads = {k: n.grad for k, n in leaves.items() if n.grad is not None}
            adam_step(emb.store, grads, config.lr)
            total += float(loss.value) * batch.size
            tape.release()
        stats = EpochStats(epoch, total / perm.size, time.perf_counter() - t0)
        history.append(stats)
        logger.info("epoch %d joint loss %.6f (%.2fs)", epoch, stats.mean_loss, stats.wall_s)
        if progress is not None:
            progress(stats)
    final = Codebook(emb.store["key_centers"], emb.store["key_offsets_raw"], config.d)
    return emb, final, history


@dataclass
class CostBits:
    """Encoding cost in bits: the real-valued log2(K) form used for
    budget-parity reporting, and the byte-packable ceil(log2 K) form."""

    real: float
    packed: int


def encoding_cost(method, num_sets, d, num_subspaces=None, num_keys=None):
    """Closed-form encoding cost of ``num_sets`` set representations."""
    n, d = int(num_sets), int(d)
    if n < 0 or d < 1:
        raise ConfigError("encoding_cost needs num_sets >= 0 and d >= 1")
    m = method.lower()
    if m == "set2bin":
        return CostBits(float(d * n), d * n)
    if m == "set2vec":
        return CostBits(float(32 * d * n), 32 * d * n)
    if m == "set2box-order":
        return CostBits(float(32 * d * n), 32 * d * n)
    if m == "set2box":
        return CostBits(float(64 * d * n), 64 * d * n)
    if m in ("set2box+", "set2box-pq"):
        if not num_subspaces or not num_keys:
            raise ConfigError(f"{method} cost needs num_subspaces and num_keys")
        D, K = int(num_subspaces), int(num_keys)
        keys = 64 * K * d
        streams = 2 if m == "set2box-pq" else 1
        real = keys + streams * n * D * float(np.log2(K))
        packed = keys + streams * n * D * code_width(K)
        return CostBits(float(real), int(packed))
    raise ConfigError(f"unknown method {method!r}")


def save_codebook(path, codebook, codes):
    """Codebook plus bit-packed per-set codes in one artifact."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2 or codes.shape[1] != codebook.num_subspaces:
        raise ArtifactError("codes must be (num_sets, D)")
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        write_u32(fh, codebook.d, codebook.num_subspaces, codebook.num_keys)
        write_f32(fh, codebook.centers)
        write_f32(fh, codebook.offsets_raw)
        write_u32(fh, codes.shape[0])
        fh.write(pack_codes(codes, codebook.num_keys))


def load_codebook(path):
    """Returns (codebook, codes)."""
    with open(path, "rb") as fh:
        expect_magic(fh, CODEBOOK_MAGIC, path)
        d, D, K = read_u32(fh, 3)
        if D == 0 or d % D != 0:
            raise ArtifactError(f"{path}: inconsistent dimensions d={d} D={D}")
        centers = read_f32(fh, (D, K, d // D))
        offsets_raw = read_f32(fh, (D, K, d // D))
        n = read_u32(fh)
        w = code_width(K)
        payload = fh.read((n * D * w + 7) // 8)
        codes = unpack_codes(payload, n, D, K)
        expect_eof(fh, path)
    return Codebook(centers, offsets_raw, int(d)), codes
