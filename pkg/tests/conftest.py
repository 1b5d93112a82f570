from __future__ import annotations

import numpy as np
import pytest


def max_rel_diff(a, b) -> float:
    """Worst relative disagreement, treating matched zeros/infinities as 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    same = ((a == 0) & (b == 0)) | (np.isinf(a) & np.isinf(b))
    denom = np.where(same, 1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.where(same, 0.0, np.abs(a - b) / denom)))


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
