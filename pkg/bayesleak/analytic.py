"""Closed-form reconstruction from the gradients of a fully connected first layer.

For y0 = A0 x + b0 the chain rule gives dl/dA0[i, :] = dl/db0[i] * x, so every neuron
with a non-zero bias gradient reveals x exactly.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attacks.config import ReconstructionResult
from .defenses import ReleasedGradient
from .evaluation.metrics import psnr
from .models import Network

logger = logging.getLogger(__name__)

TOLERANCE = 1e-12


class NoUsableNeuronError(ValueError):
    """Every first-layer bias gradient is (numerically) zero."""


@dataclass(frozen=True)
class InversionResult:
    x: np.ndarray
    rows: np.ndarray  # usable neurons, best conditioned first
    residual: float  # largest deviation of a single-row estimate from x


def invert_first_layer(gA, gb, tolerance: float = TOLERANCE) -> InversionResult:
    """Recover x from the weight gradient ``gA`` (n1 x n0) and bias gradient ``gb``.

    Rows with ``|gb[i]| > tolerance`` each give an estimate ``gA[i] / gb[i]`` and ``x`` is
    their mean. ``residual`` is the largest deviation of a single row from that mean;
    on clean gradients every row agrees up to rounding.
    """
    gA = np.asarray(gA, dtype=np.float64)
    gb = np.asarray(gb, dtype=np.float64).reshape(-1)
    if gA.ndim != 2 or gA.shape[0] != gb.size:
        raise ValueError(f"weight gradient {gA.shape} does not match bias gradient {gb.shape}")
    magnitude = np.abs(gb)
    rows = np.flatnonzero(magnitude > tolerance)
    if rows.size == 0:
        raise NoUsableNeuronError(
            f"no first-layer neuron has a bias gradient above {tolerance}"
        )
    rows = rows[np.argsort(-magnitude[rows], kind="stable")]
    estimates = gA[rows] / gb[rows, None]
    if rows.size == 1:
        return InversionResult(estimates[0], rows, 0.0)
    x = estimates.mean(axis=0)
    residual = float(np.max(np.abs(estimates - x[None, :])))
    return InversionResult(x, rows, residual)


def invert_released(released: ReleasedGradient, net: Network, tolerance=TOLERANCE):
    gA = released.g[net.segments[0].offset : net.segments[0].stop].reshape(
        net.segments[0].shape
    )
    gb = released.g[net.segments[1].offset : net.segments[1].stop]
    return invert_first_layer(gA, gb, tolerance)


def psnr_of_exact(x, x_hat, max_val: float = 1.0) -> float:
    return psnr(x, x_hat, max_val)


def analytic_attack(
    released: ReleasedGradient,
    net: Network,
    x_orig: Optional[np.ndarray] = None,
    max_val: float = 1.0,
) -> ReconstructionResult:
    """Reconstruction without optimisation, the route for undefended gradients."""
    inversion = invert_released(released, net)
    if inversion.residual > 1e-6:
        logger.debug(f"rows disagree by up to {inversion.residual:.3g}")
    bias = released.g[net.last_bias.offset : net.last_bias.stop]
    return ReconstructionResult(
        x_hat=inversion.x,
        objective_trace=[],
        distance_trace=[] if x_orig is not None else None,
        psnr=psnr_of_exact(x_orig, inversion.x, max_val) if x_orig is not None else None,
        steps_run=0,
        label=int(np.argmin(bias)),
        method="analytic",
    )
