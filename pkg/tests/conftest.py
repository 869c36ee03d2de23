import numpy as np
import pytest


@pytest.fixture(scope="session")
def session_cache(tmp_path_factory):
    """Shared on-disk cache so expensive reference ensembles are built once."""
    return tmp_path_factory.mktemp("truth_cache")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
