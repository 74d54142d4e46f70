import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tensor(rng, shape, requires_grad=True, scale=1.0, dtype=np.float64):
    from mrfnln.tensor import Tensor

    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad,
                  dtype=dtype)
