"""Similarity-preserving box representations of sets.

Learns one axis-aligned box per set from entity-level parameters, compresses
boxes into discrete key-box codes, and evaluates estimation accuracy per bit
against hashing, vector, and order-embedding baselines.
"""

__version__ = "0.1.0"

from .corpus import (
    SetCorpus,
    cardinality_profile,
    exact_similarity,
    load_corpus,
    sample_triples,
    split_corpus,
)
from .measures import MEASURES

__all__ = [
    "SetCorpus",
    "MEASURES",
    "cardinality_profile",
    "exact_similarity",
    "load_corpus",
    "sample_triples",
    "split_corpus",
    "__version__",
]
