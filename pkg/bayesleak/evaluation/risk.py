"""Monte Carlo estimate of the adversarial risk P(||x - f(g)||_2 > delta)."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ..analytic import invert_released
from ..attacks.config import AttackConfig
from ..attacks.reconstruct import run_attack
from ..data import draw_example
from ..defenses import DefenseMechanism, sample
from ..models import Network
from ..multirun import run_parallel
from .metrics import l2_distance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RiskEstimate:
    risk: float
    trials: int
    delta: float
    stderr: float
    failures: int = 0

    def to_dict(self) -> dict:
        return {
            "risk": self.risk,
            "trials": self.trials,
            "delta": self.delta,
            "stderr": self.stderr,
            "failures": self.failures,
        }


class AnalyticAttacker:
    """Closed-form first-layer inversion."""

    name = "analytic"

    def __call__(self, released, net: Network, seed: int) -> np.ndarray:
        return invert_released(released, net).x


class OptimizationAttacker:
    """:func:`run_attack` with the trial's own seed."""

    name = "optimization"

    def __init__(self, config: AttackConfig):
        self.config = config

    def __call__(self, released, net: Network, seed: int) -> np.ndarray:
        return run_attack(self.config.replace(seed=seed), released, net).x_hat


class ConstantAttacker:
    """Ignores the gradient and always answers ``value``."""

    name = "constant"

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def __call__(self, released, net: Network, seed: int) -> np.ndarray:
        return np.broadcast_to(self.value, (net.spec.input_dim,)).copy()


def analytic_attacker() -> AnalyticAttacker:
    return AnalyticAttacker()


def optimization_attacker(config: AttackConfig) -> OptimizationAttacker:
    return OptimizationAttacker(config)


def constant_attacker(value) -> ConstantAttacker:
    return ConstantAttacker(value)


def trial_seeds(seed: int, trial: int):
    """Independent integer seeds for the data draw, the defense and the attacker."""
    return [int(s) for s in np.random.SeedSequence([seed, trial]).generate_state(3)]


def _risk_trial(args) -> Optional[float]:
    attacker, defense, net, dataset, seed, trial = args
    data_seed, defense_seed, attack_seed = trial_seeds(seed, trial)
    example = draw_example(dataset, np.random.default_rng(data_seed))
    _, true_grad = net.loss_and_param_grad(example)
    released = sample(defense, true_grad, defense_seed, net.segments)
    try:
        x_hat = attacker(released, net, attack_seed)
    except Exception as error:
        logger.warning(f"trial {trial}: attacker failed ({type(error).__name__}: {error})")
        return None
    return l2_distance(example.x, x_hat)


def trial_distances(
    attacker,
    defense: DefenseMechanism,
    net: Network,
    dataset,
    trials: int,
    seed: int,
    jobs: Optional[int] = 1,
) -> List[Optional[float]]:
    """Reconstruction distance of every trial; None where the attacker failed."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    items = [(attacker, defense, net, dataset, seed, t) for t in range(trials)]
    return run_parallel(_risk_trial, items, jobs=jobs, desc="risk trials")


def risk_from_distances(distances: Sequence[Optional[float]], delta: float) -> RiskEstimate:
    losses = [1.0 if d is None or d > delta else 0.0 for d in distances]
    trials = len(losses)
    risk = float(np.mean(losses))
    return RiskEstimate(
        risk=risk,
        trials=trials,
        delta=float(delta),
        stderr=float(np.sqrt(risk * (1 - risk) / trials)),
        failures=sum(d is None for d in distances),
    )


def estimate_risk(
    attacker,
    defense: DefenseMechanism,
    net: Network,
    dataset,
    delta: float,
    trials: int,
    seed: int,
    jobs: Optional[int] = 1,
) -> RiskEstimate:
    """Fraction of trials whose reconstruction lands outside the delta-ball.

    A failing attacker counts as a loss of 1.
    """
    if delta < 0:
        raise ValueError("delta must be >= 0")
    distances = trial_distances(attacker, defense, net, dataset, trials, seed, jobs)
    return risk_from_distances(distances, delta)


def estimate_risk_curve(
    attacker,
    defense: DefenseMechanism,
    net: Network,
    dataset,
    deltas: Sequence[float],
    trials: int,
    seed: int,
    jobs: Optional[int] = 1,
) -> List[RiskEstimate]:
    """Risk at several radii from one shared set of trials."""
    distances = trial_distances(attacker, defense, net, dataset, trials, seed, jobs)
    return [risk_from_distances(distances, delta) for delta in deltas]
