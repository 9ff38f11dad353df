import numpy as np

from bayesleak.defenses import sample
from bayesleak.models import Network, NetworkSpec

# 2x2 inputs so image priors apply
SPEC = NetworkSpec((4, 6, 3), seed=3)


def network(spec=SPEC):
    return Network(spec)


def example(net, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, net.spec.input_dim)
    y = int(rng.integers(net.spec.n_classes))
    return x, y


def release(net, x, y, defense, seed=0):
    true_grad = net.param_gradient(x, y, create_graph=False).data
    return sample(defense, true_grad, seed, net.segments)
