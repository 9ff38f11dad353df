from .ball import sample_ball, sample_offsets
from .config import AttackConfig, ReconstructionResult
from .labels import AmbiguousLabelError, recover_label
from .objective import coordinate_weights, gradient_term, objective
from .optimizer import Adam, Ascent, make_optimizer
from .reconstruct import (
    NonFiniteObjectiveError,
    final_objective,
    layer_drop_attack,
    run_attack,
)

__all__ = [
    "Adam",
    "AmbiguousLabelError",
    "Ascent",
    "AttackConfig",
    "NonFiniteObjectiveError",
    "ReconstructionResult",
    "coordinate_weights",
    "final_objective",
    "gradient_term",
    "layer_drop_attack",
    "make_optimizer",
    "objective",
    "recover_label",
    "run_attack",
    "sample_ball",
    "sample_offsets",
]
