"""Shared pytest fixtures."""

from collections.abc import Iterator

import numpy as np
import pytest

from dks_lab.core.tensor import precision


@pytest.fixture
def float64() -> Iterator[None]:
    """Run the test in 64-bit precision."""
    with precision(64):
        yield


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded random generator."""
    return np.random.default_rng(1234)
