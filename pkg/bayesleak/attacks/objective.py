"""The attack objective (1/k) sum_i [log p(g|x_i) + beta log p(x_i)]."""

from typing import Optional, Sequence, Union

import numpy as np

from ..autodiff import Tensor, as_tensor, constant
from ..defenses import ReleasedGradient, coordinate_log_density
from ..models import Network
from ..priors import log_prior
from .config import AttackConfig

# keeps the cosine denominator away from zero
COSINE_EPS = 1e-30


def check_layer_mask(layer_mask, n_layers: int) -> None:
    outside = [l for l in layer_mask if not 0 <= l < n_layers]
    if outside:
        raise ValueError(f"layer mask {sorted(outside)} outside a {n_layers} layer network")
    if len(set(layer_mask)) >= n_layers:
        raise ValueError("layer mask covers every layer, nothing left to match")


def coordinate_weights(config: AttackConfig, net: Network) -> np.ndarray:
    """Weight of every parameter coordinate in the gradient term (0 for masked layers)."""
    check_layer_mask(config.layer_mask, net.n_layers)
    weights = np.ones(net.state.n_parameters)
    for segment in net.segments:
        if segment.layer in config.layer_mask:
            w = 0.0
        elif config.layer_weighting is not None:
            w = config.layer_weighting ** (net.n_layers - 1 - segment.layer)
        else:
            w = 1.0
        weights[segment.offset : segment.stop] = w
    return weights


def gradient_term(
    config: AttackConfig,
    released: ReleasedGradient,
    net: Network,
    model_grad: Tensor,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """log p(g|x) (bayes) or the matching score between ``released`` and ``model_grad``."""
    if weights is None:
        weights = coordinate_weights(config, net)
    w = constant(weights)
    g = released.g
    if config.conditional == "bayes":
        terms = coordinate_log_density(config.defense, g, model_grad, net.segments)
        return (terms * w).sum()
    diff = constant(g) - model_grad
    if config.conditional == "l2":
        return -(diff * diff * w).sum()
    if config.conditional == "l1":
        return -(diff.abs() * w).sum()
    if config.conditional == "cosine":
        g_norm = max(float(np.sqrt(np.sum(weights * g * g))), COSINE_EPS)
        dot = (model_grad * constant(weights * g)).sum()
        model_norm = ((model_grad * model_grad * w).sum() + COSINE_EPS).sqrt()
        return dot / (model_norm * g_norm)
    raise AssertionError(config.conditional)


def objective(
    config: AttackConfig,
    x,
    released: ReleasedGradient,
    net: Network,
    label: Union[int, Tensor],
    offsets: Optional[Sequence[np.ndarray]] = None,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """Monte Carlo estimate of the ball-integrated objective at ``x``.

    Args:
        config: Attack configuration.
        x: Flat input (a leaf being optimised, or any traced expression).
        released: The observed gradient.
        net: Attacked network.
        label: Class index, or a probability vector for the joint (x, y) search.
        offsets: The k ball offsets; defaults to the centre only.
        weights: Precomputed :func:`coordinate_weights`.
    """
    x = as_tensor(x)
    if offsets is None:
        offsets = np.zeros((1, x.size))
    if weights is None:
        weights = coordinate_weights(config, net)
    total = None
    for offset in offsets:
        x_i = x + constant(offset) if np.any(offset) else x
        value = gradient_term(
            config, released, net, net.param_gradient(x_i, label), weights
        )
        if config.beta != 0:
            value = value + config.beta * log_prior(config.prior, x_i)
        total = value if total is None else total + value
    return total * (1.0 / len(offsets))
