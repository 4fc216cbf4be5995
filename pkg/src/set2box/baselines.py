"""Equal-budget baselines: hashed binary sketches, pooled vectors, order
embeddings, and the product-quantized box ablation.

Set2Bin is training-free: a seeded hash drops each entity into one of d
slots and a set's sketch is the OR of its members' indicators, so |s| is
estimated by popcount, intersections by AND, unions by OR.  Set2Vec pools
one vector per set with the same two-stage attention as the box model and
regresses inner products onto one similarity measure.  The order embedding
keeps a non-negative vector per set with volume exp(-sum z), meet by
componentwise max and join by min, trained on the same seven-ratio
objective.  The PQ ablation quantizes centers and offsets independently
with dot-product key assignment instead of overlap ratios.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, softplus_value
from .boxes import inv_softplus
from .corpus import exact_similarities, sample_triples, triples_to_arrays
from .errors import ArtifactError, ConfigError
from .io import (
    code_width,
    expect_eof,
    expect_magic,
    pack_codes,
    read_f32,
    read_sidecar,
    read_u32,
    unpack_codes,
    write_f32,
    write_sidecar,
    write_u32,
)
from .measures import canonical_measure, MEASURES, similarity
from .model import (
    EntityEmbeddings,
    EpochStats,
    TrainConfig,
    embed_sets,
    graph_embed_sets,
    graph_scp,
    graph_triple_ratio_loss,
    ratio_table,
)
from .optim import ParamStore, adam_step
from .quantize import (
    JOINT_PATTERNS,
    QuantTrainConfig,
    _kmeanspp_seed,
    _split_subspaces,
)

logger = logging.getLogger(__name__)

SKETCH_MAGIC = b"S2BN"
MODEL_MAGIC = b"S2B1"  # vector/order models reuse the layout plus a tag byte
VEC_TAG = b"V"
ORDER_TAG = b"O"
PQ_MAGIC = b"S2BP"

_SPLIT_GOLD = np.uint64(0x9E3779B97F4A7C15)


def hash_entities(entities, d, seed):
    """Seeded 64-bit mix of entity ids onto [0, d) slots."""
    z = np.asarray(entities, dtype=np.uint64)
    salt = np.uint64((int(seed) * 0xBF58476D1CE4E5B9) % (1 << 64))
    z = (z + np.uint64(1)) * _SPLIT_GOLD ^ salt
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return (z % np.uint64(d)).astype(np.int64)


def sketch_from_slots(slots, d):
    """Packed indicator row (little bit order) from hashed slot indices."""
    row = np.zeros(d, dtype=np.uint8)
    row[np.asarray(slots, dtype=np.int64)] = 1
    return np.packbits(row, bitorder="little")


def bin_sketch(corpus, d, seed, set_ids=None):
    """Packed sketches for the listed sets (default all): (n, ceil(d/8))."""
    if set_ids is None:
        set_ids = np.arange(corpus.n_sets, dtype=np.int64)
    set_ids = np.asarray(set_ids, dtype=np.int64)
    slots = hash_entities(corpus.members, d, seed)
    n_bytes = (d + 7) // 8
    out = np.zeros((set_ids.size, n_bytes), dtype=np.uint8)
    for row, s in enumerate(set_ids):
        lo, hi = corpus.offsets[s], corpus.offsets[s + 1]
        bits = np.zeros(d, dtype=np.uint8)
        bits[slots[lo:hi]] = 1
        out[row] = np.packbits(bits, bitorder="little")
    return out


def save_sketch(path, sketches, d, seed):
    """Packed per-set sketch rows; the hash seed rides in the sidecar."""
    sketches = np.asarray(sketches, dtype=np.uint8)
    if sketches.ndim != 2 or sketches.shape[1] != (d + 7) // 8:
        raise ArtifactError("sketch table shape does not match d")
    with open(path, "wb") as fh:
        fh.write(SKETCH_MAGIC)
        write_u32(fh, d, sketches.shape[0])
        fh.write(sketches.tobytes())
    write_sidecar(path, {"d": int(d), "seed": int(seed)})


def load_sketch(path):
    """Returns (sketches, d, seed); seed is None without a sidecar."""
    with open(path, "rb") as fh:
        expect_magic(fh, SKETCH_MAGIC, path)
        d, n = read_u32(fh, 2)
        row = (d + 7) // 8
        payload = fh.read(n * row)
        if len(payload) != n * row:
            raise ArtifactError(f"{path}: truncated sketch payload")
        sketches = np.frombuffer(payload, dtype=np.uint8).reshape(n, row)
        expect_eof(fh, path)
    meta = read_sidecar(path)
    seed = meta.get("seed") if meta else None
    return sketches, int(d), seed


def _popcount(rows):
    return np.bitwise_count(rows).sum(axis=-1).astype(np.int64)


def bin_estimate(sketch_a, sketch_b, measure):
    """Similarity estimate from two packed sketches.

    Returns (estimate, ok).  ok is False (and the estimate 0.0) when both
    estimated sizes are zero, which cannot happen for sketches of non-empty
    sets but is guarded for defensive use.
    """
    est, ok = bin_estimates(sketch_a[None], sketch_b[None], measure)
    return float(est[0]), bool(ok[0])


def bin_estimates(rows_a, rows_b, measure):
    """Vectorized `bin_estimate` over aligned sketch tables."""
    sa = _popcount(rows_a)
    sb = _popcount(rows_b)
    inter = _popcount(rows_a & rows_b)
    union = _popcount(rows_a | rows_b)
    ok = np.minimum(sa, sb) > 0
    safe_a = np.where(ok, sa, 1)
    safe_b = np.where(ok, sb, 1)
    est = similarity(inter, safe_a, safe_b, measure, union=np.where(ok, union, 1))
    return np.where(ok, est, 0.0), ok


@dataclass
class VecConfig(TrainConfig):
    measure: str = "ji"

    def validate(self):
        super().validate()
        canonical_measure(self.measure)


class VecModel:
    """Entity matrix plus pooling context; one trained measure."""

    def __init__(self, store, num_entities, d, measure, proj_dim=None):
        self.store = store
        self.num_entities = num_entities
        self.d = d
        self.measure = canonical_measure(measure)
        self.proj_dim = proj_dim

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(VEC_TAG)
            write_u32(fh, self.num_entities, self.d)
            write_f32(fh, self.store["q_vec"])
            write_f32(fh, self.store["ctx_vec"])
            fh.write(bytes([MEASURES.index(self.measure)]))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            expect_magic(fh, MODEL_MAGIC + VEC_TAG, path)
            num_entities, d = read_u32(fh, 2)
            store = ParamStore()
            store.add("q_vec", read_f32(fh, (num_entities, d)))
            store.add("ctx_vec", read_f32(fh, (d,)))
            tag = fh.read(1)
            if len(tag) != 1 or tag[0] >= len(MEASURES):
                raise ArtifactError(f"{path}: bad measure tag")
            expect_eof(fh, path)
        return cls(store, int(num_entities), int(d), MEASURES[tag[0]])


def pairs_from_triples(triples):
    """The three unordered pairs of every triple, in slot order."""
    ids, _ = triples_to_arrays(triples)
    return np.concatenate([ids[:, [0, 1]], ids[:, [1, 2]], ids[:, [2, 0]]], axis=0)


def vec_pair_budget(per_set):
    """Triples-per-anchor rate whose three pairs match seven-ratio supervision."""
    return int(np.ceil(7.0 * per_set / 3.0))


def _graph_pool_vectors(leaves, corpus, set_ids, features=None):
    members, offsets = corpus.gather(set_ids)
    if features is None:
        rows = ad.take(leaves["q_vec"], members)
    else:
        # optional input projection: feature rows times a learned map, written
        # with broadcast-multiply and an axis reduction
        frows = features[members]
        w = leaves["proj"]
        rows = ad.sum_(w * frows[:, :, None], axis=1)
    return graph_scp(rows, offsets, leaves["ctx_vec"])


def embed_vectors(model, corpus, set_ids=None, features=None, chunk=4096):
    """Pooled set vectors, numpy inference path."""
    if set_ids is None:
        set_ids = np.arange(corpus.n_sets, dtype=np.int64)
    set_ids = np.asarray(set_ids, dtype=np.int64)
    from .model import _pool_batch

    if features is None:
        q = model.store["q_vec"]
    else:
        q = features.astype(np.float32) @ model.store["proj"]
    ctx = model.store["ctx_vec"]
    out = np.empty((set_ids.size, model.d), dtype=np.float32)
    for lo in range(0, set_ids.size, chunk):
        ids = set_ids[lo:lo + chunk]
        members, offs = corpus.gather(ids)
        out[lo:lo + ids.size] = _pool_batch(q[members], ctx, offs)
    return out


def train_vec(corpus, config, features=None, progress=None):
    """Regress pooled-vector inner products onto one measure's exact values.

    Pairs come from the same triple sampler at ceil(7/3) times the per-set
    triple rate, three pairs per triple.
    """
    config.validate()
    measure = canonical_measure(config.measure)
    ss = np.random.SeedSequence(config.seed)
    s_init, s_sample, s_shuffle = ss.spawn(3)
    rng = np.random.default_rng(s_init)
    scale = 0.5 / np.sqrt(config.d)
    store = ParamStore()
    if features is None:
        store.add("q_vec", rng.uniform(-scale, scale, size=(corpus.num_entities, config.d)))
        proj_dim = None
    else:
        features = np.asarray(features, dtype=np.float32)
        if features.shape[0] != corpus.num_entities:
            raise ConfigError("feature matrix must have one row per entity")
        proj_dim = features.shape[1]
        store.add("proj", rng.uniform(-scale, scale, size=(proj_dim, config.d)))
    store.add("ctx_vec", rng.uniform(-scale, scale, size=config.d))
    model = VecModel(store, corpus.num_entities, config.d, measure, proj_dim)

    triples = sample_triples(
        corpus,
        vec_pair_budget(config.num_pos_per_set),
        vec_pair_budget(config.num_neg_per_set),
        s_sample,
    )
    if not triples:
        raise ConfigError("no training pairs could be sampled")
    pairs = pairs_from_triples(triples)
    targets = exact_similarities(corpus, pairs, measure).astype(np.float32)
    shuffle_rng = np.random.default_rng(s_shuffle)
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(pairs.shape[0])
        total = 0.0
        for lo in range(0, perm.size, config.batch_size):
            batch = perm[lo:lo + config.batch_size]
            bp = pairs[batch]
            uniq, inv = np.unique(bp, return_inverse=True)
            inv = inv.reshape(-1, 2)
            tape = Tape()
            leaves = store.leaves(tape)
            z = _graph_pool_vectors(leaves, corpus, uniq, features)
            ip = ad.sum_(ad.take(z, inv[:, 0]) * ad.take(z, inv[:, 1]), axis=1)
            diff = ip - targets[batch]
            loss = ad.mean(diff * diff)
            tape.backward(loss)
            grads = {k: n.grad for k, n in leaves.items() if n.grad is not None}
            adam_step(store, grads, config.lr)
            total += float(loss.value) * batch.size
            tape.release()
        stats = EpochStats(epoch, total / perm.size, time.perf_counter() - t0)
        history.append(stats)
        logger.info("epoch %d vec loss %.6f (%.2fs)", epoch, stats.mean_loss, stats.wall_s)
        if progress is not None:
            progress(stats)
    return model, history


class OrderModel:
    """Entity matrix (raw, transformed positive at use) plus pooling context."""

    def __init__(self, store, num_entities, d):
        self.store = store
        self.num_entities = num_entities
        self.d = d

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(ORDER_TAG)
            write_u32(fh, self.num_entities, self.d)
            write_f32(fh, self.store["q_order_raw"])
            write_f32(fh, self.store["ctx_order"])

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            expect_magic(fh, MODEL_MAGIC + ORDER_TAG, path)
            num_entities, d = read_u32(fh, 2)
            store = ParamStore()
            store.add("q_order_raw", read_f32(fh, (num_entities, d)))
            store.add("ctx_order", read_f32(fh, (d,)))
            expect_eof(fh, path)
        return cls(store, int(num_entities), int(d))


def order_volume(z):
    """Volume of a non-negative order vector: exp(-sum z)."""
    z = np.asarray(z)
    return np.exp(-z.sum(axis=-1))


def order_meet(za, zb):
    """Intersection-side operation: componentwise max (volume shrinks)."""
    return np.maximum(np.asarray(za), np.asarray(zb))


def order_join(za, zb):
    """Union-side operation: componentwise min (volume grows)."""
    return np.minimum(np.asarray(za), np.asarray(zb))


def embed_order(model, corpus, set_ids=None, chunk=4096):
    """Non-negative pooled set vectors, numpy inference path."""
    if set_ids is None:
        set_ids = np.arange(corpus.n_sets, dtype=np.int64)
    set_ids = np.asarray(set_ids, dtype=np.int64)
    from .model import _pool_batch

    q = softplus_value(model.store["q_order_raw"], 1.0)
    ctx = model.store["ctx_order"]
    out = np.empty((set_ids.size, model.d), dtype=np.float32)
    for lo in range(0, set_ids.size, chunk):
        ids = set_ids[lo:lo + chunk]
        members, offs = corpus.gather(ids)
        out[lo:lo + ids.size] = _pool_batch(q[members], ctx, offs)
    return out


def _graph_order_ratio_loss(leaves, corpus, batch_ids, batch_ratios, ratio_mean=False):
    uniq, inv = np.unique(batch_ids, return_inverse=True)
    inv = inv.reshape(-1, 3)
    members, offsets = corpus.gather(uniq)
    rows = ad.softplus(ad.take(leaves["q_order_raw"], members), 1.0)
    z = graph_scp(rows, offsets, leaves["ctx_order"])
    slots = [ad.take(z, inv[:, s]) for s in range(3)]
    vols = [ad.exp(-ad.sum_(slots[s], axis=1)) for s in range(3)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        vols.append(ad.exp(-ad.sum_(ad.maximum(slots[a], slots[b]), axis=1)))
    meet3 = ad.maximum(ad.maximum(slots[0], slots[1]), slots[2])
    vols.append(ad.exp(-ad.sum_(meet3, axis=1)))
    zsum = vols[0]
    for v in vols[1:]:
        zsum = zsum + v
    total = None
    for ell in range(7):
        diff = vols[ell] / zsum - batch_ratios[:, ell]
        sq = diff * diff
        total = sq if total is None else total + sq
    if ratio_mean:
        total = total * (1.0 / 7.0)
    return ad.mean(total)


def train_order(corpus, config, progress=None):
    """Seven-ratio training of the order embedding (volumes exp(-sum z))."""
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    s_init, s_sample, s_shuffle = ss.spawn(3)
    rng = np.random.default_rng(s_init)
    scale = 0.5 / np.sqrt(config.d)
    store = ParamStore()
    # transformed entity rows start near 0.1 like box offsets
    store.add(
        "q_order_raw",
        inv_softplus(rng.uniform(0.095, 0.105, size=(corpus.num_entities, config.d))),
    )
    store.add("ctx_order", rng.uniform(-scale, scale, size=config.d))
    model = OrderModel(store, corpus.num_entities, config.d)
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
        perm = shuffle_rng.permutation(ids.shape[0])
        total = 0.0
        for lo in range(0, perm.size, config.batch_size):
            batch = perm[lo:lo + config.batch_size]
            tape = Tape()
            leaves = store.leaves(tape)
            loss = _graph_order_ratio_loss(
                leaves, corpus, ids[batch], ratios[batch], config.ratio_mean
            )
            tape.backward(loss)
            grads = {k: n.grad for k, n in leaves.items() if n.grad is not None}
            adam_step(store, grads, config.lr)
            total += float(loss.value) * batch.size
            tape.release()
        stats = EpochStats(epoch, total / perm.size, time.perf_counter() - t0)
        history.append(stats)
        logger.info("epoch %d order loss %.6f (%.2fs)", epoch, stats.mean_loss, stats.wall_s)
        if progress is not None:
            progress(stats)
    return model, history


class PQCodebooks:
    """Independent key-vector codebooks for centers and for offsets.

    Unlike the key-box codebook, assignment here scores subvectors against
    keys by dot product, and the two streams carry separate code tables (the
    code cost is twice that of the key-box scheme at equal D and K).
    """

    def __init__(self, key_centers, key_offsets_raw, d):
        self.key_centers = np.asarray(key_centers, dtype=np.float32)
        self.key_offsets_raw = np.asarray(key_offsets_raw, dtype=np.float32)
        if (
            self.key_centers.shape != self.key_offsets_raw.shape
            or self.key_centers.ndim != 3
        ):
            raise ConfigError("PQ codebooks must share a (D, K, subdim) shape")
        self.d = int(d)
        if self.num_subspaces * self.subdim != self.d:
            raise ConfigError("PQ codebook shape inconsistent with d")

    @property
    def num_subspaces(self):
        return self.key_centers.shape[0]

    @property
    def num_keys(self):
        return self.key_centers.shape[1]

    @property
    def subdim(self):
        return self.key_centers.shape[2]

    def key_offsets(self):
        return softplus_value(self.key_offsets_raw, 1.0)


def pq_scores(x, keys):
    """Dot product of every subvector against every key: (n, D, K)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float32))
    xs = _split_subspaces(x, keys.shape[0])
    return (xs[:, :, None, :] * keys[None]).sum(axis=3)


def pq_discretize(centers, offsets, codebooks):
    """Per-stream argmax codes: (codes_c, codes_f), ties take the lowest key."""
    single = np.asarray(centers).ndim == 1
    codes_c = pq_scores(centers, codebooks.key_centers).argmax(axis=2).astype(np.int64)
    offsets = np.atleast_2d(np.asarray(offsets, dtype=np.float32))
    codes_f = pq_scores(offsets, codebooks.key_offsets()).argmax(axis=2).astype(np.int64)
    return (codes_c[0], codes_f[0]) if single else (codes_c, codes_f)


def pq_reconstruct(codes_c, codes_f, codebooks):
    """Concatenate the coded keys of each stream: (centers, offsets)."""
    codes_c = np.asarray(codes_c, dtype=np.int64)
    codes_f = np.asarray(codes_f, dtype=np.int64)
    single = codes_c.ndim == 1
    codes_c = np.atleast_2d(codes_c)
    codes_f = np.atleast_2d(codes_f)
    if codes_c.shape != codes_f.shape or codes_c.shape[1] != codebooks.num_subspaces:
        raise ArtifactError("PQ code tables must be (num_sets, D) in both streams")
    n = codes_c.shape[0]
    sub = np.arange(codebooks.num_subspaces)
    c = codebooks.key_centers[sub, codes_c].reshape(n, codebooks.d)
    f = codebooks.key_offsets()[sub, codes_f].reshape(n, codebooks.d)
    return (c[0], f[0]) if single else (c, f)


def _graph_pq_branch(x, keys_node, keys_value, tau, shape, soft_forward):
    """One stream's straight-through reconstruction: returns (node, codes)."""
    D, K, subdim = shape
    n, d = x.value.shape
    xs = ad.reshape(x, (n, D, 1, subdim))
    scores = ad.sum_(xs * keys_node, axis=3)            # (n, D, K)
    weights = ad.softmax(scores * (1.0 / tau), axis=-1)
    w4 = ad.reshape(weights, (n, D, K, 1))
    soft = ad.reshape(ad.sum_(w4 * keys_node, axis=2), (n, d))
    codes = scores.value.argmax(axis=2).astype(np.int64)
    if soft_forward:
        return soft, codes
    hard = keys_value[np.arange(D), codes].reshape(n, d)
    return ad.straight_through(hard, soft), codes


def graph_pq_joint_loss(leaves, corpus, batch_ids, batch_ratios, config,
                        soft_forward=False):
    """Same substitution-pattern objective as the key-box scheme, with
    centers and offsets assigned independently by dot-product scores."""
    uniq, inv = np.unique(batch_ids, return_inverse=True)
    inv = inv.reshape(-1, 3)
    centers, offsets = graph_embed_sets(leaves, corpus, uniq)
    shape = (config.num_subspaces, config.num_keys, config.d // config.num_subspaces)
    kc = leaves["pq_key_centers"]
    kf = ad.softplus(leaves["pq_key_offsets_raw"], 1.0)
    rc, _ = _graph_pq_branch(centers, kc, kc.value, config.tau, shape, soft_forward)
    rf, _ = _graph_pq_branch(
        offsets,
        kf,
        softplus_value(leaves["pq_key_offsets_raw"].value, 1.0),
        config.tau,
        shape,
        soft_forward,
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
        j = ad.mean(
            graph_triple_ratio_loss(slots, batch_ratios, config.beta, config.ratio_mean)
        )
        if not all(pattern):
            j = j * config.lam
        total = j if total is None else total + j
    return total


def init_pq_codebooks(emb, corpus, config, rng, sample_size=1000):
    """Seed both streams with distance-spread sampling over train sub-vectors
    (offsets seeded in their positive space, stored raw)."""
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
        picks = _kmeanspp_seed(f_sub[:, i, :], K, rng)
        key_f_raw[i] = inv_softplus(np.maximum(picks, 1e-4))
    return PQCodebooks(key_c, key_f_raw, config.d)


def train_pq_boxes(corpus, config, progress=None):
    """End-to-end training of embeddings plus both PQ key streams.

    Returns (embeddings, codebooks, history); the deliverable representation
    is the codebooks plus per-set code pairs from `pq_discretize`.
    """
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    s_init, s_sample, s_shuffle, s_keys = ss.spawn(4)
    emb = EntityEmbeddings.init(
        corpus.num_entities, config.d, config.beta, np.random.default_rng(s_init)
    )
    books = init_pq_codebooks(emb, corpus, config, np.random.default_rng(s_keys))
    emb.store.add("pq_key_centers", books.key_centers)
    emb.store.add("pq_key_offsets_raw", books.key_offsets_raw)

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
            loss = graph_pq_joint_loss(leaves, corpus, ids[batch], ratios[batch], config)
            tape.backward(loss)
            grads = {k: n.grad for k, n in leaves.items() if n.grad is not None}
            adam_step(emb.store, grads, config.lr)
            total += float(loss.value) * batch.size
            tape.release()
        stats = EpochStats(epoch, total / perm.size, time.perf_counter() - t0)
        history.append(stats)
        logger.info("epoch %d pq loss %.6f (%.2fs)", epoch, stats.mean_loss, stats.wall_s)
        if progress is not None:
            progress(stats)
    final = PQCodebooks(
        emb.store["pq_key_centers"], emb.store["pq_key_offsets_raw"], config.d
    )
    return emb, final, history


def save_pq(path, codebooks, codes_c, codes_f):
    """Both codebooks plus both bit-packed code streams in one artifact."""
    codes_c = np.asarray(codes_c, dtype=np.int64)
    codes_f = np.asarray(codes_f, dtype=np.int64)
    if (
        codes_c.shape != codes_f.shape
        or codes_c.ndim != 2
        or codes_c.shape[1] != codebooks.num_subspaces
    ):
        raise ArtifactError("PQ code tables must be (num_sets, D) in both streams")
    with open(path, "wb") as fh:
        fh.write(PQ_MAGIC)
        write_u32(fh, codebooks.d, codebooks.num_subspaces, codebooks.num_keys)
        write_f32(fh, codebooks.key_centers)
        write_f32(fh, codebooks.key_offsets_raw)
        write_u32(fh, codes_c.shape[0])
        fh.write(pack_codes(codes_c, codebooks.num_keys))
        fh.write(pack_codes(codes_f, codebooks.num_keys))


def load_pq(path):
    """Returns (codebooks, codes_c, codes_f)."""
    with open(path, "rb") as fh:
        expect_magic(fh, PQ_MAGIC, path)
        d, D, K = read_u32(fh, 3)
        if D == 0 or d % D != 0:
            raise ArtifactError(f"{path}: inconsistent dimensions d={d} D={D}")
        key_c = read_f32(fh, (D, K, d // D))
        key_f_raw = read_f32(fh, (D, K, d // D))
        n = read_u32(fh)
        w = code_width(K)
        stream = (n * D * w + 7) // 8
        codes_c = unpack_codes(fh.read(stream), n, D, K)
        codes_f = unpack_codes(fh.read(stream), n, D, K)
        expect_eof(fh, path)
    return PQCodebooks(key_c, key_f_raw, int(d)), codes_c, codes_f
