import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ncsphere.geometry import EmbeddingBatch, simplex_etf  # noqa: E402
from ncsphere.numerics import RandomSource  # noqa: E402


def unit_rows(rng, rows, d):
    X = rng.normal(size=(rows, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def collapsed_batch(K, n, d, seed=0):
    """n copies of each vertex of a random simplex ETF, plus that ETF."""
    E = simplex_etf(K, d, RandomSource(seed)).directions
    return EmbeddingBatch(np.repeat(E, n, axis=0), np.repeat(np.arange(K), n), K), E


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, printed after the run (see test_acceptance.py).
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
