import numpy as np

from bayesleak.data import ImageDataset
from bayesleak.models import Network, NetworkSpec


def tiny_dataset(n=12, seed=0):
    rng = np.random.default_rng(seed)
    return ImageDataset(rng.random((n, 2, 2)), rng.integers(0, 3, n), n_classes=3)


def tiny_network(seed=0, hidden=32):
    return Network(NetworkSpec((4, hidden, 3), seed=seed))
