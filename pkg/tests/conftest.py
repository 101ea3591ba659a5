import sys
from pathlib import Path

import numpy as np
import pytest

from sparsekit.kernels import BACKENDS, use_backend

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    """Run the test once per available kernel backend."""
    with use_backend(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sparse_matrix(rng, m, k, density, dtype=np.float32):
    a = rng.standard_normal((m, k)).astype(dtype)
    keep = rng.random((m, k)) < density
    return np.where(keep, a, dtype(0))
