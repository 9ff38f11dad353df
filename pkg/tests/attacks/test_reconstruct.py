import json
import logging

import numpy as np
import pytest

from bayesleak.attacks import (
    AttackConfig,
    NonFiniteObjectiveError,
    final_objective,
    run_attack,
)
from bayesleak.autodiff import constant, value_and_grad
from bayesleak.defenses import DefenseMechanism, DegenerateConditionalError, ReleasedGradient
from bayesleak.models import Network, NetworkSpec

from .helpers import example, network, release

GAUSSIAN = DefenseMechanism("gaussian", sigma=0.01)


def test_traces_and_result():
    net = network()
    x, y = example(net)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(conditional="bayes", defense=GAUSSIAN, steps=25)
    result = run_attack(config, released, net, x_orig=x)
    assert result.steps_run == 25
    assert len(result.objective_trace) == len(result.distance_trace) == 25
    assert result.label == y
    assert result.method == "optimization"
    assert result.x_hat.shape == x.shape
    assert np.isfinite(result.psnr)
    json.dumps(result.to_dict())


def test_no_original_no_distances():
    net = network()
    x, y = example(net)
    result = run_attack(
        AttackConfig(steps=3), release(net, x, y, GAUSSIAN), net
    )
    assert result.distance_trace is None
    assert result.psnr is None
    assert result.final_distance is None


def test_reproducible():
    net = network()
    x, y = example(net)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(conditional="bayes", defense=GAUSSIAN, steps=10, k=3, delta=0.1, seed=4)
    a = run_attack(config, released, net, x_orig=x)
    b = run_attack(config, released, net, x_orig=x)
    np.testing.assert_array_equal(a.x_hat, b.x_hat)
    assert a.objective_trace == b.objective_trace
    c = run_attack(config.replace(seed=5), released, net, x_orig=x)
    assert not np.array_equal(a.x_hat, c.x_hat)


def test_objective_increases():
    net = network()
    x, y = example(net, seed=3)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(
        conditional="bayes", defense=GAUSSIAN, steps=300, lr=0.05
    )
    result = run_attack(config, released, net, x_orig=x)
    assert np.mean(result.objective_trace[-10:]) > result.objective_trace[0]


def test_provided_init():
    net = network()
    x, y = example(net)
    released = release(net, x, y, DefenseMechanism("none"))
    config = AttackConfig(init="provided", steps=2)
    result = run_attack(config, released, net, x_orig=x, x_init=x)
    assert result.distance_trace[0] == 0.0
    with pytest.raises(ValueError):
        run_attack(config, released, net)
    with pytest.raises(ValueError):
        run_attack(config, released, net, x_init=np.zeros(3))


def test_bayes_without_noise_is_degenerate():
    net = network()
    x, y = example(net)
    none = DefenseMechanism("none")
    with pytest.raises(DegenerateConditionalError):
        run_attack(
            AttackConfig(conditional="bayes", defense=none),
            release(net, x, y, none),
            net,
        )


def test_size_mismatch():
    net = network()
    released = ReleasedGradient(np.zeros(5), GAUSSIAN)
    with pytest.raises(ValueError):
        run_attack(AttackConfig(steps=1), released, net)


def test_zero_radius_forces_single_sample(caplog):
    with caplog.at_level(logging.WARNING):
        config = AttackConfig(k=8, delta=0.0)
    assert config.k == 1
    assert "k=1" in caplog.text


def test_config_round_trip_and_validation():
    config = AttackConfig(
        conditional="bayes", defense=GAUSSIAN, layer_mask={1}, k=2, delta=0.5
    )
    assert AttackConfig.from_dict(json.loads(json.dumps(config.to_dict()))) == config
    with pytest.raises(ValueError):
        AttackConfig.from_dict({**config.to_dict(), "schema_version": 2})
    with pytest.raises(ValueError):
        AttackConfig.from_dict({**config.to_dict(), "momentum": 0.9})
    for bad in [
        dict(k=0),
        dict(delta=-1.0),
        dict(lr_decay=1.5),
        dict(beta=-1.0),
        dict(conditional="bayes"),
        dict(conditional="huber"),
        dict(init="ones"),
    ]:
        with pytest.raises(ValueError):
            AttackConfig(**bad)


def test_divergence_is_reported():
    net = network()
    x, y = example(net)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(optimizer="ascent", lr=1e300, steps=20)
    with np.errstate(all="ignore"), pytest.raises(NonFiniteObjectiveError):
        run_attack(config, released, net)


def test_joint_fallback_on_ambiguous_label():
    net = network()
    x, y = example(net)
    g = release(net, x, y, DefenseMechanism("none")).g.copy()
    g[-3:] = [-0.3, -0.4, 0.7]
    released = ReleasedGradient(g, GAUSSIAN, None, net.segments)
    config = AttackConfig(conditional="l2", steps=5)
    assert run_attack(config, released, net).method == "optimization"
    result = run_attack(config.replace(joint_fallback=True), released, net)
    assert result.method == "joint"
    assert 0 <= result.label < 3
    assert result.x_hat.shape == (4,)


def test_final_objective_uses_the_centre():
    net = network()
    x, y = example(net)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(conditional="bayes", defense=GAUSSIAN, steps=3, k=4, delta=0.5)
    result = run_attack(config, released, net)
    value = final_objective(config, result, released, net)
    centre = final_objective(config.replace(k=1, delta=0.0), result, released, net)
    assert value == centre


def test_l2_ascent_is_plain_gradient_matching():
    net = network()
    x, y = example(net)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(
        optimizer="ascent", conditional="l2", k=1, delta=0.0, lr=0.01, lr_decay=0.99,
        steps=30, seed=7,
    )
    result = run_attack(config, released, net, label=y)

    def mismatch(v):
        diff = constant(released.g) - net.param_gradient(v, y)
        return (diff * diff).sum()

    init_seed = np.random.SeedSequence(7).spawn(2)[0]
    v = np.random.default_rng(init_seed).standard_normal(x.size)
    for i in range(30):
        _, gradient = value_and_grad(mismatch)(v)
        v = v - 0.01 * 0.99**i * gradient
    np.testing.assert_allclose(result.x_hat, v, rtol=1e-10, atol=1e-14)


def test_near_noiseless_gradient_gives_the_input():
    net = Network(NetworkSpec((20, 50, 10), seed=0))
    x, y = example(net, seed=2)
    defense = DefenseMechanism("gaussian", sigma=1e-6)
    released = release(net, x, y, defense)
    config = AttackConfig(
        conditional="bayes", defense=defense, steps=1000, lr=0.05, lr_decay=0.995
    )
    result = run_attack(config, released, net, x_orig=x, label=y)
    assert np.linalg.norm(result.x_hat - x) < 0.05


@pytest.mark.parametrize(
    "conditional,defense",
    [("l2", None), ("cosine", None), ("bayes", DefenseMechanism("gaussian", sigma=1.0))],
    ids=["l2", "cosine", "bayes"],
)
def test_small_steps_ascend(conditional, defense):
    net = network()
    x, y = example(net, seed=5)
    released = release(net, x, y, GAUSSIAN)
    config = AttackConfig(
        optimizer="ascent", conditional=conditional, defense=defense, lr=1e-3, steps=200
    )
    trace = np.array(run_attack(config, released, net, label=y).objective_trace)
    assert np.mean(np.diff(trace) >= 0) >= 0.95
