"""Hot numeric kernels with numba and pure-numpy twin implementations.

Everything here operates on ragged set batches in CSR form: a flat
``members`` array plus an ``offsets`` array of length ``n_segments + 1``,
where segment ``i`` covers ``members[offsets[i]:offsets[i + 1]]``.  Segments
must be non-empty and member ids sorted within each segment where noted.

The active backend is picked once at import time from the SET2BOX_BACKEND
environment variable ("numba" or "numpy").  Default is numba when the import
succeeds, numpy otherwise.  `use_backend` switches at runtime, which the
benchmark and the agreement tests use.
"""

import os

import numpy as np

from .errors import ConfigError

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")


# ---------------------------------------------------------------------------
# pure-numpy implementations


def _np_segment_sum(x, offsets):
    return np.add.reduceat(x, offsets[:-1], axis=0)


def _np_repeat_rows(y, offsets):
    return np.repeat(y, np.diff(offsets), axis=0)


def _np_segment_softmax(scores, offsets):
    counts = np.diff(offsets)
    seg_max = np.maximum.reduceat(scores, offsets[:-1])
    w = np.exp(scores - np.repeat(seg_max, counts))
    sums = np.add.reduceat(w, offsets[:-1])
    return w / np.repeat(sums, counts)


def _np_segment_softmax_bwd(weights, grad_w, offsets):
    counts = np.diff(offsets)
    dots = np.add.reduceat(weights * grad_w, offsets[:-1])
    return weights * (grad_w - np.repeat(dots, counts))


def _np_scatter_add_rows(out, idx, rows):
    np.add.at(out, idx, rows)
    return out


def _np_pair_intersection_sizes(members, offsets, pairs):
    sizes = np.empty(len(pairs), dtype=np.int64)
    for t, (a, b) in enumerate(pairs):
        ma = members[offsets[a]:offsets[a + 1]]
        mb = members[offsets[b]:offsets[b + 1]]
        sizes[t] = np.intersect1d(ma, mb, assume_unique=True).size
    return sizes


def _np_triple_intersection_sizes(members, offsets, triples):
    sizes = np.empty(len(triples), dtype=np.int64)
    for t, (a, b, c) in enumerate(triples):
        ma = members[offsets[a]:offsets[a + 1]]
        mb = members[offsets[b]:offsets[b + 1]]
        mc = members[offsets[c]:offsets[c + 1]]
        ab = np.intersect1d(ma, mb, assume_unique=True)
        sizes[t] = np.intersect1d(ab, mc, assume_unique=True).size
    return sizes


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _nb_segment_sum(x, offsets):
        n_seg = offsets.shape[0] - 1
        out = np.zeros((n_seg, x.shape[1]), dtype=x.dtype)
        for s in range(n_seg):
            for t in range(offsets[s], offsets[s + 1]):
                for j in range(x.shape[1]):
                    out[s, j] += x[t, j]
        return out

    @numba.njit(cache=True)
    def _nb_repeat_rows(y, offsets):
        total = offsets[-1]
        out = np.empty((total, y.shape[1]), dtype=y.dtype)
        for s in range(y.shape[0]):
            for t in range(offsets[s], offsets[s + 1]):
                for j in range(y.shape[1]):
                    out[t, j] = y[s, j]
        return out

    @numba.njit(cache=True)
    def _nb_segment_softmax(scores, offsets):
        out = np.empty_like(scores)
        for s in range(offsets.shape[0] - 1):
            lo, hi = offsets[s], offsets[s + 1]
            m = scores[lo]
            for t in range(lo + 1, hi):
                if scores[t] > m:
                    m = scores[t]
            total = 0.0
            for t in range(lo, hi):
                e = np.exp(scores[t] - m)
                out[t] = e
                total += e
            for t in range(lo, hi):
                out[t] /= total
        return out

    @numba.njit(cache=True)
    def _nb_segment_softmax_bwd(weights, grad_w, offsets):
        out = np.empty_like(weights)
        for s in range(offsets.shape[0] - 1):
            lo, hi = offsets[s], offsets[s + 1]
            dot = 0.0
            for t in range(lo, hi):
                dot += weights[t] * grad_w[t]
            for t in range(lo, hi):
                out[t] = weights[t] * (grad_w[t] - dot)
        return out

    @numba.njit(cache=True)
    def _nb_scatter_add_rows(out, idx, rows):
        for t in range(idx.shape[0]):
            r = idx[t]
            for j in range(rows.shape[1]):
                out[r, j] += rows[t, j]
        return out

    @numba.njit(cache=True)
    def _merge_count(members, lo_a, hi_a, lo_b, hi_b):
        i, j, n = lo_a, lo_b, 0
        while i < hi_a and j < hi_b:
            va, vb = members[i], members[j]
            if va == vb:
                n += 1
                i += 1
                j += 1
            elif va < vb:
                i += 1
            else:
                j += 1
        return n

    @numba.njit(cache=True)
    def _nb_pair_intersection_sizes(members, offsets, pairs):
        sizes = np.empty(pairs.shape[0], dtype=np.int64)
        for t in range(pairs.shape[0]):
            a, b = pairs[t, 0], pairs[t, 1]
            sizes[t] = _merge_count(
                members, offsets[a], offsets[a + 1], offsets[b], offsets[b + 1]
            )
        return sizes

    @numba.njit(cache=True)
    def _nb_triple_intersection_sizes(members, offsets, triples):
        sizes = np.empty(triples.shape[0], dtype=np.int64)
        for t in range(triples.shape[0]):
            a, b, c = triples[t, 0], triples[t, 1], triples[t, 2]
            i, j, k = offsets[a], offsets[b], offsets[c]
            hi_a, hi_b, hi_c = offsets[a + 1], offsets[b + 1], offsets[c + 1]
            n = 0
            while i < hi_a and j < hi_b and k < hi_c:
                va, vb, vc = members[i], members[j], members[k]
                lo = min(va, min(vb, vc))
                if va == vb and vb == vc:
                    n += 1
                    i += 1
                    j += 1
                    k += 1
                    continue
                if va == lo:
                    i += 1
                if vb == lo:
                    j += 1
                if vc == lo:
                    k += 1
            sizes[t] = n
        return sizes


_IMPLS = {
    "numpy": {
        "segment_sum": _np_segment_sum,
        "repeat_rows": _np_repeat_rows,
        "segment_softmax": _np_segment_softmax,
        "segment_softmax_bwd": _np_segment_softmax_bwd,
        "scatter_add_rows": _np_scatter_add_rows,
        "pair_intersection_sizes": _np_pair_intersection_sizes,
        "triple_intersection_sizes": _np_triple_intersection_sizes,
    }
}
if HAVE_NUMBA:
    _IMPLS["numba"] = {
        "segment_sum": _nb_segment_sum,
        "repeat_rows": _nb_repeat_rows,
        "segment_softmax": _nb_segment_softmax,
        "segment_softmax_bwd": _nb_segment_softmax_bwd,
        "scatter_add_rows": _nb_scatter_add_rows,
        "pair_intersection_sizes": _nb_pair_intersection_sizes,
        "triple_intersection_sizes": _nb_triple_intersection_sizes,
    }


def _default_backend():
    name = os.environ.get("SET2BOX_BACKEND", "").strip().lower()
    if name:
        if name not in BACKENDS:
            raise ConfigError(f"SET2BOX_BACKEND must be one of {BACKENDS}, got {name!r}")
        if name == "numba" and not HAVE_NUMBA:
            raise ConfigError("SET2BOX_BACKEND=numba but numba is not importable")
        return name
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _default_backend()
_active = _IMPLS[BACKEND]


def use_backend(name):
    """Switch the active kernel backend ("numba" or "numpy") at runtime."""
    global BACKEND, _active
    if name not in _IMPLS:
        raise ConfigError(f"unknown or unavailable backend {name!r}")
    BACKEND = name
    _active = _IMPLS[name]


def get_impl(name, backend=None):
    """Fetch one kernel by name, optionally from a specific backend."""
    table = _IMPLS[backend] if backend is not None else _active
    return table[name]


def _as_csr(members, offsets):
    return (
        np.ascontiguousarray(members, dtype=np.int64),
        np.ascontiguousarray(offsets, dtype=np.int64),
    )


def segment_sum(x, offsets):
    """Sum rows of ``x`` within each segment, returning (n_segments, d)."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    return _active["segment_sum"](np.ascontiguousarray(x), offsets)


def repeat_rows(y, offsets):
    """Inverse layout of `segment_sum`: copy row i of ``y`` to segment i's slots."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    return _active["repeat_rows"](np.ascontiguousarray(y), offsets)


def segment_softmax(scores, offsets):
    """Softmax of ``scores`` computed independently within each segment."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    return _active["segment_softmax"](np.ascontiguousarray(scores), offsets)


def segment_softmax_bwd(weights, grad_w, offsets):
    """Backward of `segment_softmax` given its output and upstream gradient."""
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    return _active["segment_softmax_bwd"](
        np.ascontiguousarray(weights), np.ascontiguousarray(grad_w), offsets
    )


def scatter_add_rows(out, idx, rows):
    """Accumulate ``rows[t]`` into ``out[idx[t]]`` in index order, in place."""
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    return _active["scatter_add_rows"](out, idx, np.ascontiguousarray(rows))


def pair_intersection_sizes(members, offsets, pairs):
    """Exact |A n B| for each id pair; members must be sorted per segment."""
    members, offsets = _as_csr(members, offsets)
    pairs = np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)
    return _active["pair_intersection_sizes"](members, offsets, pairs)


def triple_intersection_sizes(members, offsets, triples):
    """Exact |A n B n C| for each id triple; members sorted per segment."""
    members, offsets = _as_csr(members, offsets)
    triples = np.ascontiguousarray(triples, dtype=np.int64).reshape(-1, 3)
    return _active["triple_intersection_sizes"](members, offsets, triples)


def one_vs_many_intersection_sizes(anchor_members, members, offsets):
    """|anchor n S| for every segment S at once, via sorted membership lookup."""
    anchor = np.sort(np.asarray(anchor_members, dtype=np.int64))
    members, offsets = _as_csr(members, offsets)
    if anchor.size == 0:
        return np.zeros(offsets.shape[0] - 1, dtype=np.int64)
    pos = np.searchsorted(anchor, members)
    pos[pos == anchor.size] = 0
    hit = (anchor[pos] == members).astype(np.int64)
    return np.add.reduceat(hit, offsets[:-1])
