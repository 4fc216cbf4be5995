"""Axis-aligned box geometry: volumes, intersections, and overlap ratios.

A box is stored as (center c, offset f) with f >= 0; its corners are
m = c - f and M = c + f.  Hard volume is the product of clamped edge
lengths; the smoothed volume replaces ReLU with a temperature-beta softplus
so that gradients exist for disjoint or degenerate boxes.  Intersections of
boxes are plain interval pairs (possibly empty), not boxes.

Plain-array functions here broadcast over any leading shape with the final
axis as the box dimension.  The graph_* twins build the same math on the
autodiff tape and are what training uses.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import softplus_value


@dataclass
class Box:
    """One box; validates the non-negative-offset invariant on construction."""

    center: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.offset = np.asarray(self.offset, dtype=np.float64)
        if self.center.shape != self.offset.shape:
            raise ValueError("center and offset shapes differ")
        if np.any(self.offset < 0):
            raise ValueError("box offsets must be non-negative")

    @property
    def mins(self):
        return self.center - self.offset

    @property
    def maxs(self):
        return self.center + self.offset

    @classmethod
    def from_bounds(cls, mins, maxs):
        mins = np.asarray(mins, dtype=np.float64)
        maxs = np.asarray(maxs, dtype=np.float64)
        return cls((mins + maxs) / 2.0, (maxs - mins) / 2.0)


def inv_softplus(y, beta=1.0):
    """Inverse of softplus: the raw value whose softplus equals y > 0."""
    y = np.asarray(y, dtype=np.float64)
    by = beta * y
    # for large beta*y the inverse is y itself to machine precision
    safe = np.where(by > 30.0, y, np.log(np.expm1(np.minimum(by, 30.0))) / beta)
    return safe


def hard_volume(mins, maxs):
    """Product of non-negative edge lengths; 0 once any edge collapses."""
    edges = np.maximum(np.asarray(maxs) - np.asarray(mins), 0.0)
    return edges.prod(axis=-1)


def smooth_volume(mins, maxs, beta):
    """Softplus-smoothed volume; strictly positive for every interval pair."""
    return softplus_value(np.asarray(maxs) - np.asarray(mins), beta).prod(axis=-1)


def volume(mins, maxs, beta=None):
    return hard_volume(mins, maxs) if beta is None else smooth_volume(mins, maxs, beta)


def intersect(mins_a, maxs_a, mins_b, maxs_b):
    """Interval pair of the intersection: max of mins, min of maxs."""
    return (
        np.maximum(np.asarray(mins_a), np.asarray(mins_b)),
        np.minimum(np.asarray(maxs_a), np.asarray(maxs_b)),
    )


def union_volume(mins_a, maxs_a, mins_b, maxs_b, beta=None):
    """Inclusion-exclusion: V(A) + V(B) - V(A n B)."""
    mi, ma = intersect(mins_a, maxs_a, mins_b, maxs_b)
    return (
        volume(mins_a, maxs_a, beta)
        + volume(mins_b, maxs_b, beta)
        - volume(mi, ma, beta)
    )


def bor(mins_a, maxs_a, mins_b, maxs_b, beta=None):
    """Box overlap ratio: mean of the intersection's share of each volume.

    With a smoothing beta all three volumes are the smoothed ones and the
    result lies in (0, 1]; with beta=None the hard-volume variant is used
    (callers must then keep the operand volumes positive).
    """
    mi, ma = intersect(mins_a, maxs_a, mins_b, maxs_b)
    vi = volume(mi, ma, beta)
    va = volume(mins_a, maxs_a, beta)
    vb = volume(mins_b, maxs_b, beta)
    return 0.5 * (vi / va + vi / vb)


def contains_points(mins, maxs, points):
    """Boolean membership of each row of ``points`` in the closed box."""
    points = np.asarray(points)
    return np.all((points >= mins) & (points <= maxs), axis=-1)


# ---------------------------------------------------------------------------
# tape twins


def graph_smooth_volume(mins, maxs, beta):
    """Smoothed volume of (mins, maxs) Nodes along the last axis."""
    return ad.prod(ad.softplus(maxs - mins, beta), axis=-1)


def graph_intersect(mins_a, maxs_a, mins_b, maxs_b):
    return ad.maximum(mins_a, mins_b), ad.minimum(maxs_a, maxs_b)


def graph_bor(mins_a, maxs_a, mins_b, maxs_b, beta):
    """Smoothed box overlap ratio on the tape, broadcasting like the arrays."""
    mi, ma = graph_intersect(mins_a, maxs_a, mins_b, maxs_b)
    vi = graph_smooth_volume(mi, ma, beta)
    va = graph_smooth_volume(mins_a, maxs_a, beta)
    vb = graph_smooth_volume(mins_b, maxs_b, beta)
    return (vi / va + vi / vb) * 0.5
