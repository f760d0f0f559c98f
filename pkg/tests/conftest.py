import numpy as np
import pytest

from orderspn.score import LocalScoreTable, full_candidates


def random_scores(d: int, seed: int, spread: float = 2.0) -> LocalScoreTable:
    """Full-candidate score table with i.i.d. normal log scores."""
    rng = np.random.default_rng(seed)
    cands = tuple(tuple(c) for c in full_candidates(d))
    tables = tuple(
        rng.normal(0.0, spread, size=1 << len(c)) for c in cands
    )
    return LocalScoreTable(d, cands, tables)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
