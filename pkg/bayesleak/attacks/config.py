import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from ..defenses import DefenseMechanism
from ..priors import PriorSpec

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
INITS = ("gaussian_noise", "zeros", "provided")
CONDITIONALS = ("bayes", "l2", "l1", "cosine")
OPTIMIZERS = ("adam", "ascent")


@dataclass(frozen=True)
class AttackConfig:
    """Hyperparameters of a gradient leakage attack.

    ``conditional="bayes"`` uses the defense's own log p(g|x); ``l2``, ``l1`` and
    ``cosine`` are the gradient-matching special cases. ``layer_mask`` lists layers whose
    gradient is left out of the objective and ``layer_weighting`` (gamma) weights layer
    ``l`` of an ``L`` layer network by ``gamma ** (L - 1 - l)``.
    """

    k: int = 1
    delta: float = 0.0
    steps: int = 200
    lr: float = 0.1
    lr_decay: float = 1.0
    beta: float = 0.0
    init: str = "gaussian_noise"
    conditional: str = "l2"
    defense: Optional[DefenseMechanism] = None
    prior: PriorSpec = field(default_factory=PriorSpec)
    layer_mask: FrozenSet[int] = frozenset()
    layer_weighting: Optional[float] = None
    optimizer: str = "adam"
    joint_fallback: bool = False
    seed: int = 0
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "layer_mask", frozenset(int(l) for l in self.layer_mask))
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.delta >= 0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.delta == 0 and self.k != 1:
            logger.warning(f"delta=0 makes every Monte Carlo sample equal, using k=1 instead of {self.k}")
            object.__setattr__(self, "k", 1)
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must be in (0, 1], got {self.lr_decay}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.init not in INITS:
            raise ValueError(f"unknown init '{self.init}', expected one of {INITS}")
        if self.conditional not in CONDITIONALS:
            raise ValueError(
                f"unknown conditional '{self.conditional}', expected one of {CONDITIONALS}"
            )
        if self.conditional == "bayes" and self.defense is None:
            raise ValueError("the bayes conditional needs a defense mechanism")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer '{self.optimizer}', expected one of {OPTIMIZERS}")
        if self.layer_weighting is not None and not self.layer_weighting > 0:
            raise ValueError(f"layer_weighting must be > 0, got {self.layer_weighting}")
        if any(l < 0 for l in self.layer_mask):
            raise ValueError(f"negative layer index in layer_mask {sorted(self.layer_mask)}")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")

    def replace(self, **changes) -> "AttackConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["defense"] = self.defense.to_dict() if self.defense is not None else None
        d["prior"] = self.prior.to_dict()
        d["layer_mask"] = sorted(self.layer_mask)
        d["schema_version"] = SCHEMA_VERSION
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        version = d.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported attack schema version {version}")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown attack keys: {sorted(unknown)}")
        if d.get("defense") is not None:
            d["defense"] = DefenseMechanism.from_dict(d["defense"])
        if "prior" in d:
            d["prior"] = PriorSpec.from_dict(d["prior"] or {})
        if "layer_mask" in d:
            d["layer_mask"] = frozenset(d["layer_mask"] or ())
        return cls(**d)


def _json_float(value):
    if value is None:
        return None
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


@dataclass
class ReconstructionResult:
    """Outcome of one attack.

    ``objective_trace[i]`` and ``distance_trace[i]`` are measured at the iterate before
    update ``i``; ``x_hat`` is the iterate after the last update.
    """

    x_hat: np.ndarray
    objective_trace: List[float]
    distance_trace: Optional[List[float]] = None
    psnr: Optional[float] = None
    steps_run: int = 0
    label: Optional[int] = None
    method: str = "optimization"
    layer_mask: Tuple[int, ...] = ()
    selected_layer: Optional[int] = None
    layer_objectives: Optional[Dict[int, float]] = None

    def __post_init__(self):
        assert len(self.objective_trace) == self.steps_run
        assert self.distance_trace is None or len(self.distance_trace) == self.steps_run

    @property
    def final_distance(self) -> Optional[float]:
        return self.distance_trace[-1] if self.distance_trace else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["x_hat"] = [float(v) for v in np.asarray(self.x_hat).reshape(-1)]
        d["psnr"] = _json_float(self.psnr)
        d["layer_mask"] = list(self.layer_mask)
        if self.layer_objectives is not None:
            d["layer_objectives"] = {
                str(layer): value for layer, value in sorted(self.layer_objectives.items())
            }
        return d
