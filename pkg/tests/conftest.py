import numpy as np
import pytest

from repair.synth import SyntheticSpec, generate
from repair.types import ShortlistBatch

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


def random_batch(rng, n=20, k=5, K=12, labels_in_shortlist=True):
    """Batch of random shortlists with distinct classes and sorted scores."""
    shortlist = np.stack([rng.choice(K, size=k, replace=False) for _ in range(n)])
    scores = -np.sort(-rng.normal(size=(n, k)), axis=1)
    if labels_in_shortlist:
        labels = shortlist[np.arange(n), rng.integers(0, k, size=n)]
    else:
        labels = rng.integers(0, K, size=n)
    return ShortlistBatch(np.arange(n), labels, shortlist, scores)


@pytest.fixture(scope="session")
def small_synth():
    return generate(SyntheticSpec(K=20, n_train=800, n_test=400, seed=3))


@pytest.fixture(scope="session")
def small_ncs():
    spec = SyntheticSpec.for_regime("non_class_separable", K=40, n_train=1500, n_test=800,
                                    n_confusers=6, seed=1)
    return generate(spec)


@pytest.fixture(scope="session")
def cs_synth():
    return generate(SyntheticSpec(seed=0))


@pytest.fixture(scope="session")
def ncs_synth():
    return generate(SyntheticSpec.for_regime("non_class_separable", seed=0))
