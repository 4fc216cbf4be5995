import numpy as np
import pytest

from set2box.corpus import SetCorpus, split_corpus
from set2box.datasets import make_random_corpus

_CRITERION_LINES = []


def pytest_collection_modifyitems(items):
    # the desk-scale study belongs at the end of the run
    items.sort(key=lambda item: item.path.name == "test_acceptance.py")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, passed, detail in sorted(_CRITERION_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {status}  {detail}")


@pytest.fixture(scope="session")
def criterion():
    """Recorder for the one-line-per-criterion summary printed after the run."""

    def record(num, passed, detail=""):
        _CRITERION_LINES.append((int(num), bool(passed), detail))
        return bool(passed)

    return record


@pytest.fixture
def tiny_corpus():
    """Three pairwise-overlapping sets: {1,2}, {2,3}, {3,1} over 4 entities."""
    return SetCorpus([1, 2, 2, 3, 3, 1], [0, 2, 4, 6], num_entities=4)


@pytest.fixture
def small_split_corpus():
    """A 60-set random corpus with split labels, enough to sample triples."""
    corpus = make_random_corpus(num_sets=60, num_entities=40, min_size=2, max_size=12, seed=5)
    return split_corpus(corpus, 0.5, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
