"""Set corpora: parsing, splits, exact cardinalities, and triple sampling.

A corpus is a ragged list of entity-id sets in CSR layout.  Sets are
canonicalized on construction (members sorted, duplicates dropped) so the
merge-based intersection kernels can assume sorted unique members.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, CorpusFormatError
from .measures import similarity

SPLIT_NAMES = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2


@dataclass
class CardinalityProfile:
    """The seven exact cardinalities of a set triple and their ratios.

    Order: |s_i|, |s_j|, |s_k|, |s_i n s_j|, |s_j n s_k|, |s_k n s_i|,
    |s_i n s_j n s_k|.  ``ratios`` is counts / z and sums to 1 (z > 0 for
    non-empty sets).
    """

    counts: np.ndarray
    z: int
    ratios: np.ndarray


class SetCorpus:
    """Ragged family of non-empty entity-id sets with optional split labels."""

    def __init__(self, members, offsets, num_entities=None, split=None):
        members = np.asarray(members, dtype=np.int64)
        offsets = np.asarray(offsets, dtype=np.int64)
        if offsets.ndim != 1 or offsets.size < 1 or offsets[0] != 0:
            raise CorpusFormatError("offsets must be 1-d starting at 0")
        if offsets[-1] != members.size or np.any(np.diff(offsets) <= 0):
            raise CorpusFormatError("corpus sets must be non-empty and cover members")
        if members.size and members.min() < 0:
            raise CorpusFormatError("negative entity id")
        members, offsets = _canonicalize(members, offsets)
        self.members = members
        self.offsets = offsets
        inferred = int(members.max()) + 1 if members.size else 0
        self.num_entities = int(num_entities) if num_entities is not None else inferred
        if self.num_entities < inferred:
            raise CorpusFormatError("num_entities smaller than largest member id + 1")
        if split is not None:
            split = np.asarray(split, dtype=np.int8)
            if split.shape != (self.n_sets,):
                raise CorpusFormatError("split labels must align with sets")
        self.split = split
        self._inverted = None

    @property
    def n_sets(self):
        return self.offsets.size - 1

    @property
    def sizes(self):
        return np.diff(self.offsets)

    def set_members(self, i):
        return self.members[self.offsets[i]:self.offsets[i + 1]]

    def ids_in_split(self, name):
        if self.split is None:
            raise ConfigError("corpus has no split labels")
        label = SPLIT_NAMES.index(name)
        return np.flatnonzero(self.split == label).astype(np.int64)

    def inverted_index(self):
        """CSR entity -> set ids map (set ids ascending within each entity)."""
        if self._inverted is None:
            order = np.argsort(self.members, kind="stable")
            ent_sorted = self.members[order]
            set_ids = np.repeat(np.arange(self.n_sets, dtype=np.int64), self.sizes)[order]
            ent_offsets = np.zeros(self.num_entities + 1, dtype=np.int64)
            counts = np.bincount(ent_sorted, minlength=self.num_entities)
            np.cumsum(counts, out=ent_offsets[1:])
            self._inverted = (set_ids, ent_offsets)
        return self._inverted

    def gather(self, ids):
        """Flat members + offsets for the listed sets, in the given order."""
        ids = np.asarray(ids, dtype=np.int64)
        counts = self.sizes[ids]
        out_offsets = np.zeros(ids.size + 1, dtype=np.int64)
        np.cumsum(counts, out=out_offsets[1:])
        total = int(out_offsets[-1])
        starts = self.offsets[ids]
        pos = np.arange(total, dtype=np.int64)
        seg = np.repeat(np.arange(ids.size, dtype=np.int64), counts)
        within = pos - out_offsets[seg]
        return self.members[starts[seg] + within], out_offsets


def _canonicalize(members, offsets):
    n = offsets.size - 1
    seg = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
    order = np.lexsort((members, seg))
    members = members[order]
    seg = seg[order]
    keep = np.ones(members.size, dtype=bool)
    keep[1:] = (members[1:] != members[:-1]) | (seg[1:] != seg[:-1])
    members = members[keep]
    seg = seg[keep]
    counts = np.bincount(seg, minlength=n)
    if np.any(counts == 0):
        raise CorpusFormatError("empty set after canonicalization")
    new_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=new_offsets[1:])
    return members, new_offsets


def load_corpus(path, split_path=None, num_entities=None):
    """Parse the text corpus format: one set per line, whitespace-separated
    non-negative integer ids, '#' lines are comments.  Empty lines and
    non-integer tokens are rejected; an empty file is rejected."""
    members = []
    offsets = [0]
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped.startswith("#"):
                continue
            if not stripped:
                raise CorpusFormatError(f"{path}:{lineno}: empty line (empty set)")
            try:
                ids = [int(tok) for tok in stripped.split()]
            except ValueError as exc:
                raise CorpusFormatError(f"{path}:{lineno}: non-integer token") from exc
            if any(i < 0 for i in ids):
                raise CorpusFormatError(f"{path}:{lineno}: negative entity id")
            members.extend(ids)
            offsets.append(len(members))
    if len(offsets) == 1:
        raise CorpusFormatError(f"{path}: no sets")
    split = load_split(split_path) if split_path is not None else None
    return SetCorpus(np.array(members), np.array(offsets), num_entities, split)


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(corpus.n_sets):
            fh.write(" ".join(str(e) for e in corpus.set_members(i)))
            fh.write("\n")


def load_split(path):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            name = line.strip()
            if name not in SPLIT_NAMES:
                raise CorpusFormatError(f"{path}:{lineno}: bad split label {name!r}")
            labels.append(SPLIT_NAMES.index(name))
    return np.array(labels, dtype=np.int8)


def save_split(corpus, path):
    if corpus.split is None:
        raise ConfigError("corpus has no split labels")
    with open(path, "w", encoding="utf-8") as fh:
        for label in corpus.split:
            fh.write(SPLIT_NAMES[label] + "\n")


def split_corpus(corpus, train_frac, seed):
    """Assign train/val/test labels by a seeded permutation.

    round(train_frac * n) sets train; the remainder is halved val/test with
    the odd set going to test.  Returns a new corpus; the input is untouched.
    """
    if not 0.0 < train_frac < 1.0:
        raise ConfigError(f"train_frac must be in (0, 1), got {train_frac}")
    n = corpus.n_sets
    n_train = int(np.floor(train_frac * n + 0.5))
    rest = n - n_train
    n_val = rest // 2
    perm = np.random.default_rng(seed).permutation(n)
    split = np.empty(n, dtype=np.int8)
    split[perm[:n_train]] = TRAIN
    split[perm[n_train:n_train + n_val]] = VAL
    split[perm[n_train + n_val:]] = TEST
    return SetCorpus(corpus.members, corpus.offsets, corpus.num_entities, split)


def triple_counts(corpus, triples):
    """Exact seven-cardinality table, one row per (i, j, k) triple."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    sizes = corpus.sizes
    out = np.empty((triples.shape[0], 7), dtype=np.int64)
    out[:, 0] = sizes[triples[:, 0]]
    out[:, 1] = sizes[triples[:, 1]]
    out[:, 2] = sizes[triples[:, 2]]
    m, off = corpus.members, corpus.offsets
    out[:, 3] = kernels.pair_intersection_sizes(m, off, triples[:, [0, 1]])
    out[:, 4] = kernels.pair_intersection_sizes(m, off, triples[:, [1, 2]])
    out[:, 5] = kernels.pair_intersection_sizes(m, off, triples[:, [2, 0]])
    out[:, 6] = kernels.triple_intersection_sizes(m, off, triples)
    return out


def cardinality_profile(corpus, triple):
    """Profile of one triple of distinct set ids."""
    i, j, k = (int(t) for t in triple)
    if len({i, j, k}) != 3:
        raise ConfigError(f"triple ids must be distinct, got {triple}")
    counts = triple_counts(corpus, [(i, j, k)])[0]
    z = int(counts.sum())
    return CardinalityProfile(counts=counts, z=z, ratios=counts / z)


def exact_similarity(corpus, a, b, measure):
    """Ground-truth similarity between two sets under one measure."""
    inter = int(kernels.pair_intersection_sizes(corpus.members, corpus.offsets, [(a, b)])[0])
    sa, sb = int(corpus.sizes[a]), int(corpus.sizes[b])
    return float(similarity(inter, sa, sb, measure))


def exact_similarities(corpus, pairs, measure):
    """Vectorized `exact_similarity` over an (n, 2) id array."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    inter = kernels.pair_intersection_sizes(corpus.members, corpus.offsets, pairs)
    sa = corpus.sizes[pairs[:, 0]]
    sb = corpus.sizes[pairs[:, 1]]
    return similarity(inter, sa, sb, measure)


def sample_triples(corpus, num_pos_per_set, num_neg_per_set, seed):
    """Per-anchor triple sampling over the train split.

    Each train set anchors ``num_pos_per_set`` positive triples (both
    partners share at least one entity with the anchor, drawn through the
    inverted index) and ``num_neg_per_set`` negatives (partners uniform over
    train sets).  All three ids in a triple are distinct; positives that
    cannot find two distinct partners are dropped.  Returns a list of
    ((i, j, k), kind) with kind "pos" or "neg", anchors ascending, positives
    before negatives within an anchor.
    """
    if corpus.split is None:
        raise ConfigError("sample_triples needs a split corpus")
    if num_pos_per_set < 0 or num_neg_per_set < 0:
        raise ConfigError("per-set triple counts must be >= 0")
    train_ids = corpus.ids_in_split("train")
    if train_ids.size < 3:
        raise ConfigError(f"need at least 3 train sets, have {train_ids.size}")
    rng = np.random.default_rng(seed)

    in_train = np.zeros(corpus.n_sets, dtype=bool)
    in_train[train_ids] = True
    # per-entity count of train sets containing it (members are unique per set)
    train_members, _ = corpus.gather(train_ids)
    train_deg = np.bincount(train_members, minlength=corpus.num_entities)
    inv_sets, inv_offsets = corpus.inverted_index()

    out = []
    train_pos = {int(s): p for p, s in enumerate(train_ids)}
    for s in train_ids:
        s = int(s)
        mem = corpus.set_members(s)
        shared = mem[train_deg[mem] >= 2]
        for _ in range(num_pos_per_set):
            if shared.size == 0:
                break
            p1 = _draw_partner(rng, s, shared, inv_sets, inv_offsets, in_train)
            p2 = p1
            for _ in range(16):
                p2 = _draw_partner(rng, s, shared, inv_sets, inv_offsets, in_train)
                if p2 != p1:
                    break
            if p2 == p1:
                continue
            out.append(((s, p1, p2), "pos"))
        for _ in range(num_neg_per_set):
            r1 = _draw_other(rng, train_ids, (train_pos[s],))
            r2 = _draw_other(rng, train_ids, (train_pos[s], train_pos[r1]))
            out.append(((s, r1, r2), "neg"))
    return out


def _draw_partner(rng, anchor, shared_entities, inv_sets, inv_offsets, in_train):
    """Uniform train set sharing a (uniform shared) entity with the anchor."""
    e = int(shared_entities[rng.integers(shared_entities.size)])
    lo, hi = inv_offsets[e], inv_offsets[e + 1]
    cands = inv_sets[lo:hi][in_train[inv_sets[lo:hi]]]
    # swap trick: uniform over candidates except the anchor, no rejection
    k = int(rng.integers(cands.size - 1))
    pick = int(cands[k])
    return pick if pick != anchor else int(cands[-1])


def _draw_other(rng, ids, excluded_positions):
    """Uniform element of ``ids`` avoiding the listed positions."""
    for _ in range(1000):
        k = int(rng.integers(ids.size))
        if k not in excluded_positions:
            return int(ids[k])
    raise ConfigError("could not draw a distinct negative partner")


def triples_to_arrays(triples):
    """Split the sampler's output into an (n, 3) id array and a kind array."""
    ids = np.array([t for t, _ in triples], dtype=np.int64).reshape(-1, 3)
    kinds = np.array([1 if k == "pos" else 0 for _, k in triples], dtype=np.int8)
    return ids, kinds
