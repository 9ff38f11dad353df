import numpy as np
import pytest

from bayesleak.attacks import AttackConfig
from bayesleak.defenses import DefenseMechanism
from bayesleak.evaluation.risk import (
    analytic_attacker,
    constant_attacker,
    estimate_risk,
    estimate_risk_curve,
    optimization_attacker,
    risk_from_distances,
    trial_distances,
    trial_seeds,
)

from ..testconfig import RUN_EXPERIMENTS
from .helpers import tiny_dataset, tiny_network

NONE = DefenseMechanism("none")


def test_analytic_attacker_has_no_risk_without_defense():
    estimate = estimate_risk(
        analytic_attacker(), NONE, tiny_network(), tiny_dataset(), 1e-6, 20, seed=0
    )
    assert estimate.risk == 0.0
    assert estimate.failures == 0
    assert estimate.trials == 20


def test_constant_attacker_always_loses():
    estimate = estimate_risk(
        constant_attacker(100.0), NONE, tiny_network(), tiny_dataset(), 1.0, 10, seed=0
    )
    assert estimate.risk == 1.0
    assert estimate.stderr == 0.0


def test_curve_is_monotone():
    defense = DefenseMechanism("gaussian", sigma=0.05)
    deltas = [0.1, 0.3, 0.6, 1.0, 2.0]
    curve = estimate_risk_curve(
        constant_attacker(0.5), defense, tiny_network(), tiny_dataset(), deltas, 30, seed=1
    )
    risks = [estimate.risk for estimate in curve]
    assert risks == sorted(risks, reverse=True)
    assert [estimate.delta for estimate in curve] == deltas


def test_failures_count_as_losses():
    class Failing:
        def __call__(self, released, net, seed):
            raise RuntimeError("boom")

    estimate = estimate_risk(Failing(), NONE, tiny_network(), tiny_dataset(), 10.0, 4, seed=0)
    assert estimate.risk == 1.0
    assert estimate.failures == 4


def test_risk_from_distances():
    estimate = risk_from_distances([0.1, 0.5, None, 2.0], 1.0)
    assert estimate.risk == 0.5
    assert estimate.failures == 1
    assert estimate.stderr == pytest.approx(0.25)


def test_trials_are_reproducible():
    attacker = optimization_attacker(AttackConfig(steps=3))
    defense = DefenseMechanism("gaussian", sigma=0.1)
    a = trial_distances(attacker, defense, tiny_network(), tiny_dataset(), 3, seed=2)
    b = trial_distances(attacker, defense, tiny_network(), tiny_dataset(), 3, seed=2)
    assert a == b
    assert len(set(trial_seeds(2, 0) + trial_seeds(2, 1))) == 6


def test_invalid_arguments():
    with pytest.raises(ValueError):
        estimate_risk(analytic_attacker(), NONE, tiny_network(), tiny_dataset(), -1.0, 3, 0)
    with pytest.raises(ValueError):
        estimate_risk(analytic_attacker(), NONE, tiny_network(), tiny_dataset(), 1.0, 0, 0)


@pytest.mark.skipif(not RUN_EXPERIMENTS, reason="slow experiment")
def test_bayes_attacker_has_lower_risk_than_matching():
    defense = DefenseMechanism("laplacian", b=0.05)
    net, dataset = tiny_network(), tiny_dataset(n=50)
    common = dict(steps=300, lr=0.05, lr_decay=0.995)
    bayes = optimization_attacker(AttackConfig(conditional="bayes", defense=defense, **common))
    l2 = optimization_attacker(AttackConfig(conditional="l2", **common))
    risk_bayes = estimate_risk(bayes, defense, net, dataset, 0.5, 40, seed=0, jobs=0)
    risk_l2 = estimate_risk(l2, defense, net, dataset, 0.5, 40, seed=0, jobs=0)
    assert risk_bayes.risk <= risk_l2.risk + 2 * np.hypot(risk_bayes.stderr, risk_l2.stderr)
