import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from drq.network import DenseNetwork, Layer, init_network

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def linear_net(w=((1.0, 0.0), (-1.0, 0.0)), b=(0.0, 0.0)) -> DenseNetwork:
    """Two logits z = W x + b; with the default W the boundary is x0 = 0."""
    return DenseNetwork((Layer(np.array(w), np.array(b)),))


def constant_net(d=2, c=2) -> DenseNetwork:
    return DenseNetwork((Layer(np.zeros((c, d)), np.zeros(c)),))


@pytest.fixture
def lin():
    return linear_net()


@pytest.fixture
def small_relu():
    return init_network((3, 5, 4, 3), "relu", seed=3)
