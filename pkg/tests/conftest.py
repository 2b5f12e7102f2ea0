import logfire
import numpy as np
import pytest

from riplab.schemas.rng import RngStream
from riplab.services.measurement_service import draw_complex_gaussian

logfire.configure(send_to_logfire=False, console=False)


@pytest.fixture
def rng() -> RngStream:
    return RngStream(master_seed=12345)


@pytest.fixture
def generator(rng: RngStream) -> np.random.Generator:
    return rng.child("fixture").generator()


@pytest.fixture
def random_matrix(generator: np.random.Generator):
    """Factory for complex Gaussian test matrices."""

    def make(M: int, N: int) -> np.ndarray:
        return draw_complex_gaussian(generator, (M, N))

    return make
