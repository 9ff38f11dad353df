"""Gradient ascent on the attack objective (the approximate Bayes optimal adversary)."""

import logging
from typing import Optional

import numpy as np

from ..autodiff import NonFiniteError, Tensor, constant, value_and_grad
from ..defenses import DegenerateConditionalError, ReleasedGradient
from ..evaluation.metrics import l2_distance, psnr
from ..models import Network
from .ball import sample_offsets
from .config import AttackConfig, ReconstructionResult
from .labels import AmbiguousLabelError, recover_label
from .objective import coordinate_weights, objective
from .optimizer import make_optimizer

logger = logging.getLogger(__name__)


class NonFiniteObjectiveError(FloatingPointError):
    def __init__(self, step: int, value: float = float("nan")):
        super().__init__(f"attack objective became non-finite at step {step} ({value})")
        self.step = step
        self.value = value


def initial_input(
    config: AttackConfig,
    dim: int,
    rng: np.random.Generator,
    x_init: Optional[np.ndarray] = None,
) -> np.ndarray:
    if config.init == "gaussian_noise":
        return rng.standard_normal(dim)
    if config.init == "zeros":
        return np.zeros(dim)
    if x_init is None:
        raise ValueError("init='provided' needs an initial input")
    x_init = np.array(x_init, dtype=np.float64).reshape(-1)
    if x_init.size != dim:
        raise ValueError(f"initial input has {x_init.size} entries, expected {dim}")
    return x_init


def softmax(z: Tensor) -> Tensor:
    e = (z - constant(np.max(z.data))).exp()
    return e / e.sum()


def run_attack(
    config: AttackConfig,
    released: ReleasedGradient,
    net: Network,
    x_orig: Optional[np.ndarray] = None,
    label: Optional[int] = None,
    x_init: Optional[np.ndarray] = None,
    max_val: float = 1.0,
) -> ReconstructionResult:
    """Reconstruct the input behind ``released`` by ascending the attack objective.

    The label is recovered from the gradient when not given. When
    ``config.joint_fallback`` is set and recovery is ambiguous, input and label (as
    softmax logits) are optimised together.
    """
    if config.conditional == "bayes" and config.defense.kind == "none":
        raise DegenerateConditionalError(
            "no defense: p(g|x) is a Dirac delta, use the analytic attack instead"
        )
    if released.g.size != net.state.n_parameters:
        raise ValueError(
            f"released gradient has {released.g.size} entries, "
            f"network has {net.state.n_parameters} parameters"
        )
    weights = coordinate_weights(config, net)
    dim = net.spec.input_dim
    if x_orig is not None:
        x_orig = np.asarray(x_orig, dtype=np.float64).reshape(-1)

    joint = False
    if label is None:
        try:
            label = recover_label(released, net, strict=config.joint_fallback)
        except AmbiguousLabelError as error:
            logger.info(f"{error}; optimising input and label jointly")
            joint = True

    init_seed, ball_seed = np.random.SeedSequence(config.seed).spawn(2)
    x0 = initial_input(config, dim, np.random.default_rng(init_seed), x_init)
    ball_rng = np.random.default_rng(ball_seed)

    if joint:
        n_classes = net.spec.n_classes
        x_part = np.arange(dim)
        z_part = np.arange(dim, dim + n_classes)
        v = np.concatenate([x0, np.zeros(n_classes)])

        def evaluate(v_t, offsets):
            soft_label = softmax(v_t.take(z_part))
            return objective(
                config, v_t.take(x_part), released, net, soft_label, offsets, weights
            )

    else:
        v = x0

        def evaluate(v_t, offsets):
            return objective(config, v_t, released, net, label, offsets, weights)

    optimizer = make_optimizer(config.optimizer, config.lr, config.lr_decay)
    objective_trace = []
    distance_trace = [] if x_orig is not None else None
    for i in range(config.steps):
        offsets = sample_offsets(config.delta, config.k, dim, ball_rng)
        try:
            value, gradient = value_and_grad(lambda v_t: evaluate(v_t, offsets))(v)
        except NonFiniteError as error:
            raise NonFiniteObjectiveError(i) from error
        if not np.isfinite(value) or not np.all(np.isfinite(gradient)):
            raise NonFiniteObjectiveError(i, value)
        objective_trace.append(value)
        if distance_trace is not None:
            distance_trace.append(l2_distance(x_orig, v[:dim]))
        if (i + 1) % config.log_every == 0:
            logger.debug(f"step {i + 1}/{config.steps}: objective {value:.6g}")
        v = optimizer.step(v, gradient, i)

    x_hat = v[:dim].copy()
    if joint:
        label = int(np.argmax(v[dim:]))
    return ReconstructionResult(
        x_hat=x_hat,
        objective_trace=objective_trace,
        distance_trace=distance_trace,
        psnr=psnr(x_orig, x_hat, max_val) if x_orig is not None else None,
        steps_run=config.steps,
        label=int(label),
        method="joint" if joint else "optimization",
        layer_mask=tuple(sorted(config.layer_mask)),
    )


def final_objective(
    config: AttackConfig, result: ReconstructionResult, released, net: Network
) -> float:
    """Objective at the reconstruction, evaluated at the ball centre only."""
    config = config.replace(k=1, delta=0.0)
    return objective(config, result.x_hat, released, net, result.label).item()


def layer_drop_attack(
    config: AttackConfig,
    released: ReleasedGradient,
    net: Network,
    defended_layer: Optional[int] = None,
    x_orig: Optional[np.ndarray] = None,
    label: Optional[int] = None,
    max_val: float = 1.0,
) -> ReconstructionResult:
    """Attack with the gradient of the defended layer left out of the objective.

    Without ``defended_layer`` every layer is tried and the reconstruction with the
    highest final objective is returned (ties go to the lowest layer).
    """
    if net.n_layers < 2:
        raise ValueError("dropping a layer of a single layer network leaves nothing to match")
    if defended_layer is not None:
        if not 0 <= defended_layer < net.n_layers:
            raise ValueError(
                f"defended layer {defended_layer} outside a {net.n_layers} layer network"
            )
        result = run_attack(
            config.replace(layer_mask=frozenset({defended_layer})),
            released,
            net,
            x_orig=x_orig,
            label=label,
            max_val=max_val,
        )
        result.selected_layer = defended_layer
        return result

    best = None
    layer_objectives = {}
    for layer in range(net.n_layers):
        layer_config = config.replace(layer_mask=frozenset({layer}))
        result = run_attack(
            layer_config, released, net, x_orig=x_orig, label=label, max_val=max_val
        )
        layer_objectives[layer] = final_objective(layer_config, result, released, net)
        logger.debug(f"dropping layer {layer}: final objective {layer_objectives[layer]:.6g}")
        if best is None or layer_objectives[layer] > layer_objectives[best[0]]:
            best = (layer, result)
    layer, result = best
    result.selected_layer = layer
    result.layer_objectives = layer_objectives
    return result
