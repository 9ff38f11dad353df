import numpy as np
import pytest

from bayesleak.autodiff import Tensor, grad, hvp_capable_grad
from bayesleak.models import (
    LabeledExample,
    Network,
    NetworkSpec,
    NetworkState,
    Segment,
    TrainingDivergedError,
    build_segments,
    cross_entropy,
    forward,
    init_parameters,
    param_gradient,
)

from .oracles import central_differences, relative_error

SPEC = NetworkSpec((3, 4, 2), seed=7)


def test_segments_partition_theta():
    segments = build_segments(SPEC)
    assert [(s.layer, s.kind, s.offset, s.length, s.shape) for s in segments] == [
        (0, "weight", 0, 12, (4, 3)),
        (0, "bias", 12, 4, (4,)),
        (1, "weight", 16, 8, (2, 4)),
        (1, "bias", 24, 2, (2,)),
    ]
    assert Segment.from_dict(segments[2].to_dict()) == segments[2]
    state = init_parameters(SPEC)
    assert state.n_parameters == 26
    assert state.n_layers == 2
    np.testing.assert_array_equal(state.layer_indices(1), np.arange(16, 26))
    with pytest.raises(ValueError):
        state.layer_indices(2)


def test_split_flatten_round_trip():
    state = init_parameters(SPEC)
    parts = state.split()
    assert [p.shape for p in parts] == [(4, 3), (4,), (2, 4), (2,)]
    np.testing.assert_array_equal(state.flatten(parts), state.theta)
    tensor_parts = state.split(Tensor(state.theta))
    np.testing.assert_array_equal(state.flatten(tensor_parts).data, state.theta)
    with pytest.raises(ValueError):
        NetworkState(np.zeros(25), build_segments(SPEC))


def test_initialisation_is_reproducible():
    a, b = init_parameters(SPEC), init_parameters(SPEC)
    np.testing.assert_array_equal(a.theta, b.theta)
    c = init_parameters(NetworkSpec((3, 4, 2), seed=8))
    assert not np.array_equal(a.theta, c.theta)
    weight, bias = a.split()[:2]
    assert np.all(bias == 0)
    assert np.abs(weight).max() <= np.sqrt(6.0 / 3)


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec((3,))
    with pytest.raises(ValueError):
        NetworkSpec((3, 0, 2))
    with pytest.raises(ValueError):
        NetworkSpec((3, 2), activation="tanh")
    assert NetworkSpec.from_dict(SPEC.to_dict()) == SPEC


def test_forward_checks_input_shape():
    net = Network(SPEC)
    assert net.forward(np.ones(3)).shape == (2,)
    with pytest.raises(ValueError):
        net.forward(np.ones(4))


def test_cross_entropy():
    logits = Tensor([1.0, 2.0, 3.0])
    expected = np.log(np.exp(logits.data).sum()) - 2.0
    assert cross_entropy(logits, 1).item() == pytest.approx(expected)
    one_hot = Tensor([0.0, 1.0, 0.0])
    assert cross_entropy(logits, one_hot).item() == pytest.approx(expected)
    # large logits stay finite
    assert np.isfinite(cross_entropy(Tensor([1000.0, 0.0]), 1).item())
    with pytest.raises(ValueError):
        cross_entropy(logits, 3)


def test_param_gradient_matches_finite_differences():
    state = init_parameters(SPEC)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(3)
    _, g = param_gradient(SPEC, state, x, 1, create_graph=False)

    def loss(theta):
        return cross_entropy(forward(SPEC, state.with_theta(theta), x), 1).item()

    fd = central_differences(loss, state.theta)
    assert relative_error(g.data, fd) < 1e-6


def test_gradient_of_gradient_in_x():
    state = init_parameters(SPEC)
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal(3)
    target = rng.standard_normal(26)

    def outer(x):
        _, g = param_gradient(SPEC, state, x, 0, create_graph=True)
        d = g - Tensor(target)
        return (d * d).sum()

    g = hvp_capable_grad(outer, x0)
    fd = central_differences(lambda v: outer(Tensor(v)).item(), x0)
    assert relative_error(g.data, fd) < 1e-5


def test_soft_label_gradient():
    state = init_parameters(SPEC)
    x = np.array([0.3, -0.2, 0.5])
    y = Tensor([0.25, 0.75])
    _, g = param_gradient(SPEC, state, x, y, create_graph=True)
    gy = grad(g.sum(), y)
    assert gy.shape == (2,)


def test_training_reduces_loss():
    rng = np.random.default_rng(2)
    examples = [LabeledExample(rng.standard_normal(3), i % 2) for i in range(20)]
    net = Network(SPEC)

    def mean_loss(n):
        return np.mean([n.loss_and_param_grad(e)[0] for e in examples])

    trained = net.train(examples, 200, 0.05)
    assert trained.step == 200
    assert net.step == 0
    assert mean_loss(trained) < mean_loss(net)
    assert net.train(examples, 0, 0.05).state.theta is net.state.theta
    with pytest.raises(ValueError):
        net.train(examples, -1, 0.05)
    with pytest.raises(ValueError):
        net.train([], 3, 0.05)


def test_training_divergence_is_reported():
    x = np.array([1e10, -1e10, 2e10])
    examples = [LabeledExample(x, 0), LabeledExample(-x, 1)]
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingDivergedError) as error:
            Network(SPEC).train(examples, 10, 1e300)
    assert error.value.step >= 1


def test_labeled_example_is_immutable():
    example = LabeledExample([1, 2], 1.0)
    assert example.y == 1
    with pytest.raises(ValueError):
        example.x[0] = 3.0


def test_network_rejects_foreign_state():
    with pytest.raises(ValueError):
        Network(NetworkSpec((3, 5, 2)), init_parameters(SPEC))
    assert Network(SPEC).predict(np.zeros(3)) in (0, 1)
