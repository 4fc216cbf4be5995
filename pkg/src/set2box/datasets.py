"""Corpus construction: MovieLens ingestion and synthetic generators.

`ingest_movielens` turns a ratings file into one set per user (the movies
the user rated above 3).  The synthetic `ml1m_like_corpus` matches that
dataset's scale statistics (6,038 sets over 3,533 entities, sizes lognormal
up to 1,435) and plants latent-topic overlap so that similar sets exist to
retrieve; it stands in when the real ratings file is absent.
"""

import io
import os
import zipfile

import numpy as np

from .corpus import SetCorpus
from .errors import ConfigError, CorpusFormatError

ML1M_NUM_ENTITIES = 3533
ML1M_NUM_SETS = 6038
ML1M_MAX_SIZE = 1435
# env var pointing at ratings.dat (or the ml-1m zip) for the real dataset
ML1M_ENV = "SET2BOX_ML1M"


def _iter_rating_lines(path):
    """Lines of a ratings file; transparently reads ml-1m zip archives."""
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            name = next(
                (n for n in zf.namelist() if n.endswith("ratings.dat")), None
            )
            if name is None:
                raise CorpusFormatError(f"{path}: archive holds no ratings.dat")
            with zf.open(name) as fh:
                for raw in io.TextIOWrapper(fh, encoding="latin-1"):
                    yield raw
        return
    with open(path, encoding="latin-1") as fh:
        yield from fh


def ingest_movielens(path, min_rating_exclusive=3.0):
    """One set per user: the movies rated strictly above the threshold.

    Accepts the `UserID::MovieID::Rating::Timestamp` format or comma/tab
    separated equivalents.  Movie ids are densely reindexed in ascending
    original order; users ordered by ascending original id; users left with
    no qualifying movie are dropped.
    """
    users, movies, ratings = [], [], []
    for lineno, raw in enumerate(_iter_rating_lines(path), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        for sep in ("::", ",", "\t"):
            parts = line.split(sep)
            if len(parts) >= 3:
                break
        else:
            raise CorpusFormatError(f"{path}:{lineno}: unparseable line {line!r}")
        try:
            users.append(int(parts[0]))
            movies.append(int(parts[1]))
            ratings.append(float(parts[2]))
        except ValueError as exc:
            raise CorpusFormatError(f"{path}:{lineno}: {exc}") from exc
    if not users:
        raise CorpusFormatError(f"{path}: no ratings found")
    users = np.asarray(users, dtype=np.int64)
    movies = np.asarray(movies, dtype=np.int64)
    ratings = np.asarray(ratings)
    keep = ratings > min_rating_exclusive
    users, movies = users[keep], movies[keep]
    if users.size == 0:
        raise CorpusFormatError(f"{path}: no ratings above {min_rating_exclusive}")
    uniq_movies, movie_idx = np.unique(movies, return_inverse=True)
    order = np.lexsort((movie_idx, users))
    users, movie_idx = users[order], movie_idx[order]
    # duplicate (user, movie) pairs collapse through the corpus canonicalizer
    boundaries = np.flatnonzero(np.diff(users)) + 1
    offsets = np.concatenate([[0], boundaries, [users.size]]).astype(np.int64)
    return SetCorpus(movie_idx, offsets, num_entities=uniq_movies.size)


def find_ml1m(data_dir="data"):
    """Path to a local MovieLens 1M ratings source, or None.

    Checks the override env var first, then conventional locations under
    ``data_dir``.
    """
    override = os.environ.get(ML1M_ENV)
    candidates = [override] if override else []
    candidates += [
        os.path.join(data_dir, "ml-1m", "ratings.dat"),
        os.path.join(data_dir, "ml-1m.zip"),
        os.path.join(data_dir, "ratings.dat"),
    ]
    for cand in candidates:
        if cand and os.path.exists(cand):
            return cand
    return None


def make_random_corpus(num_sets, num_entities, min_size=1, max_size=None, seed=0):
    """Uniform random sets; sizes uniform in [min_size, max_size]."""
    if max_size is None:
        max_size = max(min_size, num_entities // 4)
    if not 1 <= min_size <= max_size <= num_entities:
        raise ConfigError("need 1 <= min_size <= max_size <= num_entities")
    rng = np.random.default_rng(seed)
    sizes = rng.integers(min_size, max_size + 1, size=num_sets)
    members = np.concatenate([
        rng.choice(num_entities, size=k, replace=False) for k in sizes
    ])
    offsets = np.zeros(num_sets + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return SetCorpus(members, offsets, num_entities=num_entities)


def planted_corpus(num_clusters=8, sets_per_cluster=15, core_size=12,
                   noise_size=6, num_entities=400, seed=0):
    """Clustered sets sharing a per-cluster core, plus per-set noise.

    Within a cluster every pair overlaps in most of the core, so exact
    nearest neighbors are strongly non-uniform; across clusters overlap is
    incidental.  Useful where retrieval quality must be distinguishable
    from chance.
    """
    if core_size + noise_size > num_entities:
        raise ConfigError("core_size + noise_size exceeds the entity universe")
    rng = np.random.default_rng(seed)
    sets = []
    for _ in range(num_clusters):
        core = rng.choice(num_entities, size=core_size, replace=False)
        for _ in range(sets_per_cluster):
            keep = core[rng.random(core_size) < 0.85]
            pool = np.setdiff1d(np.arange(num_entities), core, assume_unique=False)
            noise = rng.choice(pool, size=noise_size, replace=False)
            s = np.unique(np.concatenate([keep, noise]))
            if s.size == 0:
                s = core[:1]
            sets.append(s)
    members = np.concatenate(sets)
    offsets = np.zeros(len(sets) + 1, dtype=np.int64)
    np.cumsum([len(s) for s in sets], out=offsets[1:])
    return SetCorpus(members, offsets, num_entities=num_entities)


def size_probe_corpus(sizes=(10, 100, 1000), sets_per_size=64, seed=0):
    """Sets of exactly the listed sizes, for latency probing."""
    rng = np.random.default_rng(seed)
    universe = 4 * max(sizes)
    all_sets = []
    for s in sizes:
        for _ in range(sets_per_size):
            all_sets.append(rng.choice(universe, size=s, replace=False))
    members = np.concatenate(all_sets)
    offsets = np.zeros(len(all_sets) + 1, dtype=np.int64)
    np.cumsum([len(x) for x in all_sets], out=offsets[1:])
    return SetCorpus(members, offsets, num_entities=universe)


def ml1m_like_corpus(num_sets=ML1M_NUM_SETS, num_entities=ML1M_NUM_ENTITIES,
                     max_size=ML1M_MAX_SIZE, num_topics=12, seed=0):
    """Synthetic stand-in matching MovieLens 1M scale statistics.

    Set sizes are lognormal (median ~65, mean ~95) clipped to [1, max_size].
    Entities carry a global popularity weight and one latent topic; each set
    has a Dirichlet topic mixture, and members are drawn without replacement
    with probability proportional to popularity times topic affinity (plus a
    floor, so every entity stays reachable).  Sets sharing dominant topics
    therefore overlap far more than chance, giving the corpus a real
    neighborhood structure.
    """
    rng = np.random.default_rng(seed)
    cap = min(max_size, num_entities)
    sizes = np.clip(
        np.rint(rng.lognormal(4.171, 0.875, size=num_sets)), 1, cap
    ).astype(np.int64)
    popularity = rng.lognormal(0.0, 1.2, size=num_entities)
    topic_of = rng.integers(0, num_topics, size=num_entities)
    mixtures = rng.dirichlet(np.full(num_topics, 0.3), size=num_sets)
    log_pop = np.log(popularity)
    sets = []
    for u in range(num_sets):
        affinity = mixtures[u][topic_of] + 0.15
        logits = log_pop + np.log(affinity)
        # Gumbel top-k draws `sizes[u]` distinct entities with probability
        # proportional to exp(logits)
        keys = logits + rng.gumbel(size=num_entities)
        take = np.argpartition(-keys, sizes[u] - 1)[: sizes[u]]
        sets.append(np.sort(take))
    members = np.concatenate(sets)
    offsets = np.zeros(num_sets + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    return SetCorpus(members, offsets, num_entities=num_entities)


def load_ml1m_or_synthetic(data_dir="data", seed=0):
    """(corpus, source) where source is 'movielens' or 'synthetic'."""
    path = find_ml1m(data_dir)
    if path is not None:
        return ingest_movielens(path), "movielens"
    return ml1m_like_corpus(seed=seed), "synthetic"
