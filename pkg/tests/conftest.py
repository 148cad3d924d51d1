import os
from pathlib import Path

import numpy as np
import pytest

from geonet.nn import ArchSpec, Batch, init_network

MNIST_CANDIDATES = [os.environ.get("GEONET_DATA"), "/root/data/mnist", "/root/data"]


def mnist_path():
    for c in MNIST_CANDIDATES:
        if c and (Path(c) / "train-images-idx3-ubyte").exists():
            return Path(c)
        if c and (Path(c) / "mnist" / "train-images-idx3-ubyte").exists():
            return Path(c) / "mnist"
    return None


requires_mnist = pytest.mark.skipif(mnist_path() is None,
                                    reason="MNIST IDX files not found (set GEONET_DATA)")


def random_tanh_net(rng, max_params=200):
    """Random tanh MLP with at most ``max_params`` weights, plus weights and inputs."""
    while True:
        depth = rng.integers(1, 4)
        dims = [int(rng.integers(1, 7)) for _ in range(depth + 1)]
        arch = ArchSpec.mlp(dims, hidden="tanh", output=str(rng.choice(["tanh", "identity"])))
        if arch.n_params <= max_params:
            break
    w = rng.normal(scale=0.8, size=arch.n_params)
    X = rng.normal(size=(int(rng.integers(1, 6)), arch.n_inputs))
    return arch, w, X


@pytest.fixture
def tiny():
    """mlp-tiny: 4-3-2 tanh with fixed weights and a 5-sample batch."""
    arch = ArchSpec.mlp([4, 3, 2], hidden="tanh", output="identity")
    rng = np.random.default_rng(11)
    w = init_network(arch, 3) + 0.3 * rng.normal(size=arch.n_params)
    X = rng.normal(size=(5, 4))
    y = np.array([0, 1, 1, 0, 1])
    return arch, w, Batch(X, y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
