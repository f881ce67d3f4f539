import numpy as np
import pytest

from vsscrowd import scan


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=scan.available_backends())
def scan_backend(request):
    with scan.use_backend(request.param):
        yield request.param


SEEDS = [0, 1, 2, 3, 4]
