import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stochrom import SeedPolicy, TimeGrid, ZeroControl, sample_ensemble

from helpers import scalar_system


@pytest.fixture(scope="session")
def ou_grid():
    return TimeGrid(step_count=200, step_size=5e-3)


@pytest.fixture(scope="session")
def ou_system():
    return scalar_system(rate=-1.0, noise=1.0, x0=1.0)


@pytest.fixture(scope="session")
def ou_large_ensemble(ou_system, ou_grid):
    """100k scalar mean-reversion paths, shared by the Monte Carlo checks."""
    policy = SeedPolicy(base_seed=90210)
    return sample_ensemble(
        ou_system, ZeroControl(1), ou_grid, 100_000, policy, "ou-large"
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
