"""Grid search over attack hyperparameters and the prior-weight calibration."""

import logging
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..attacks.config import AttackConfig
from ..attacks.reconstruct import run_attack
from ..defenses import ReleasedGradient
from ..models import Network
from ..multirun import run_parallel

logger = logging.getLogger(__name__)

# 13 decades, 1e-7 ... 1e5
BETA_CALIBRATION_GRID = tuple(float(10.0**e) for e in range(-7, 6))


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentGrid:
    """Hyperparameter axes searched per attack.

    When ``calibrate`` is set, the beta axis is replaced by ``beta_points`` values
    spaced logarithmically over [0.5 beta*, 2 beta*] after :func:`calibrate_beta`
    (``bayes_beta_points`` for the Bayes attack). Layer weighting is only searched for
    the gradient-matching attacks.
    """

    lrs: Tuple[float, ...] = (0.1,)
    lr_decays: Tuple[float, ...] = (1.0,)
    betas: Tuple[float, ...] = (0.0,)
    layer_weightings: Tuple[Optional[float], ...] = (None,)
    phis: Tuple[Optional[float], ...] = (None,)
    calibrate: bool = False
    beta_points: int = 3
    bayes_beta_points: int = 3
    calibration_examples: int = 2

    def __post_init__(self):
        for name in ("lrs", "lr_decays", "betas", "layer_weightings", "phis"):
            values = tuple(getattr(self, name))
            if not values:
                raise ValueError(f"grid axis '{name}' is empty")
            object.__setattr__(self, name, values)
        if self.calibrate and min(self.beta_points, self.bayes_beta_points, self.calibration_examples) < 1:
            raise ValueError("calibration needs at least one beta point and one example")

    def betas_for(self, conditional: str, beta_star: Optional[float] = None) -> Tuple[float, ...]:
        if not self.calibrate:
            return self.betas
        assert beta_star is not None
        n = self.bayes_beta_points if conditional == "bayes" else self.beta_points
        return calibrated_range(beta_star, n)

    def weightings_for(self, conditional: str) -> Tuple[Optional[float], ...]:
        return (None,) if conditional == "bayes" else self.layer_weightings

    def expand(self, template: AttackConfig, beta_star: Optional[float] = None) -> List[AttackConfig]:
        """Every configuration of the grid, smallest parameter values first."""
        configs = []
        conditional = template.conditional
        for lr, decay, beta, weighting, phi in product(
            sorted(self.lrs),
            sorted(self.lr_decays),
            sorted(self.betas_for(conditional, beta_star)),
            sorted(self.weightings_for(conditional), key=lambda w: -1 if w is None else w),
            sorted(self.phis, key=lambda p: -1 if p is None else p),
        ):
            prior = template.prior
            if phi is not None:
                if prior.kind != "tv_plus_range":
                    raise ValueError("the phi axis needs the tv_plus_range prior")
                prior = type(prior)(prior.kind, phi, prior.image_shape)
            configs.append(
                template.replace(
                    lr=lr, lr_decay=decay, beta=beta, layer_weighting=weighting, prior=prior
                )
            )
        return configs

    def n_combinations(self, conditional: str) -> int:
        n = self.bayes_beta_points if conditional == "bayes" else self.beta_points
        betas = n if self.calibrate else len(self.betas)
        return (
            len(self.lrs)
            * len(self.lr_decays)
            * betas
            * len(self.weightings_for(conditional))
            * len(self.phis)
        )


PRESETS: Dict[str, ExperimentGrid] = {
    "table2-desk": ExperimentGrid(
        lrs=(0.03, 0.1),
        lr_decays=(0.995,),
        betas=(1e-4,),
        layer_weightings=(None,),
        calibrate=True,
        beta_points=2,
        bayes_beta_points=2,
        calibration_examples=2,
    ),
    "full": ExperimentGrid(
        lrs=(0.01, 0.02, 0.05, 0.1, 0.2, 0.5),
        lr_decays=(0.98, 0.99, 0.995, 0.998, 1.0),
        betas=(1.0,),
        layer_weightings=(None, 0.9),
        calibrate=True,
        beta_points=8,
        bayes_beta_points=18,
        calibration_examples=4,
    ),
}


def calibrated_range(beta_star: float, n: int) -> Tuple[float, ...]:
    if n == 1:
        return (beta_star,)
    return tuple(float(b) for b in np.geomspace(0.5 * beta_star, 2.0 * beta_star, n))


@dataclass(frozen=True, eq=False)
class CalibrationCase:
    released: ReleasedGradient
    net: Network
    x_orig: np.ndarray
    max_val: float = 1.0


def _calibration_psnr(args) -> Optional[float]:
    config, case = args
    try:
        return run_attack(config, case.released, case.net, x_orig=case.x_orig, max_val=case.max_val).psnr
    except Exception as error:
        logger.warning(f"calibration attack failed at beta={config.beta:g}: {error}")
        return None


def calibrate_beta(
    template: AttackConfig,
    cases: Sequence[CalibrationCase],
    betas: Sequence[float] = BETA_CALIBRATION_GRID,
    jobs: Optional[int] = 1,
) -> Tuple[float, Tuple[float, float]]:
    """beta with the highest mean PSNR over the cases, and the search range [0.5 beta*, 2 beta*].

    Ties go to the smallest beta.
    """
    if not cases:
        raise ValueError("calibration needs at least one case")
    betas = sorted(betas)
    items = [(template.replace(beta=beta), case) for beta in betas for case in cases]
    results = run_parallel(_calibration_psnr, items, jobs=jobs, desc="beta calibration")

    best_beta, best_score = None, None
    for i, beta in enumerate(betas):
        scores = [r for r in results[i * len(cases) : (i + 1) * len(cases)] if r is not None]
        if not scores:
            continue
        score = float(np.mean(scores))
        logger.debug(f"beta={beta:g}: mean PSNR {score:.3f} over {len(scores)} cases")
        if best_score is None or score > best_score:
            best_beta, best_score = beta, score
    if best_beta is None:
        raise CalibrationError("every attack of the beta sweep failed")
    return best_beta, (0.5 * best_beta, 2.0 * best_beta)
