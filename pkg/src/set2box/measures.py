"""The four set-similarity measures, shared by exact counts and estimators.

Every formula takes an intersection mass plus the two operand masses, which
may be integer cardinalities (exact), box volumes, order-embedding volumes,
or sketch estimates.  The union defaults to inclusion-exclusion; callers
with an exact union mass (the order embedding's join) pass it explicitly.
"""

import numpy as np

from .errors import ConfigError

MEASURES = ("oc", "cs", "ji", "di")


def canonical_measure(name):
    m = str(name).strip().lower()
    if m not in MEASURES:
        raise ConfigError(f"unknown measure {name!r}; expected one of {MEASURES}")
    return m


def similarity(inter, size_a, size_b, measure, union=None):
    """Vectorized similarity for one measure from component masses."""
    inter = np.asarray(inter, dtype=np.float64)
    size_a = np.asarray(size_a, dtype=np.float64)
    size_b = np.asarray(size_b, dtype=np.float64)
    m = canonical_measure(measure)
    if m == "oc":
        return inter / np.minimum(size_a, size_b)
    if m == "cs":
        return inter / np.sqrt(size_a * size_b)
    if m == "di":
        return 2.0 * inter / (size_a + size_b)
    if union is None:
        union = size_a + size_b - inter
    return inter / np.asarray(union, dtype=np.float64)
