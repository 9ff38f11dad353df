"""Attack x defense x checkpoint comparison with per-attack grid search."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..analytic import analytic_attack
from ..attacks.config import AttackConfig
from ..attacks.reconstruct import run_attack
from ..data import first_examples
from ..defenses import DefenseMechanism, sample
from ..models import Network
from ..multirun import run_parallel
from .grid import ExperimentGrid, CalibrationCase, calibrate_beta

logger = logging.getLogger(__name__)

COLUMNS = ["dataset", "defense", "attack", "train_step", "mean_psnr", "n", "failures"]


@dataclass
class ResultRow:
    dataset: str
    defense: str
    attack: str
    train_step: int
    mean_psnr: float
    n: int
    failures: int
    reason: Optional[str] = None
    best_params: Dict = field(default_factory=dict)

    @property
    def key(self) -> Tuple[str, str, str, int]:
        return (self.dataset, self.defense, self.attack, self.train_step)


class ResultTable:
    """Mean PSNR per (dataset, defense, attack, train step) cell."""

    def __init__(self, rows: Sequence[ResultRow] = ()):
        self.rows = sorted(rows, key=lambda row: row.key)

    def __len__(self) -> int:
        return len(self.rows)

    def cell(self, defense: str, attack: str, train_step: int = 0) -> ResultRow:
        for row in self.rows:
            if (row.defense, row.attack, row.train_step) == (defense, attack, train_step):
                return row
        raise KeyError((defense, attack, train_step))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[getattr(row, column) for column in COLUMNS] for row in self.rows],
            columns=COLUMNS,
        )

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g", na_rep="nan")

    def to_records(self) -> List[dict]:
        return [
            {
                **{column: getattr(row, column) for column in COLUMNS},
                "reason": row.reason,
                "best_params": row.best_params,
            }
            for row in self.rows
        ]


def _matrix_item(args) -> Tuple[Optional[float], Optional[str]]:
    config, released, net, x, max_val = args
    try:
        if config is None:
            result = analytic_attack(released, net, x_orig=x, max_val=max_val)
        else:
            result = run_attack(config, released, net, x_orig=x, max_val=max_val)
    except Exception as error:
        return None, f"{type(error).__name__}: {error}"
    return result.psnr, None


def _example_seed(seed: int, *keys) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _grid_params(config: Optional[AttackConfig]) -> dict:
    if config is None:
        return {}
    return {
        "lr": config.lr,
        "lr_decay": config.lr_decay,
        "beta": config.beta,
        "layer_weighting": config.layer_weighting,
        "phi": config.prior.phi,
    }


def run_matrix(
    grid: ExperimentGrid,
    attacks: Mapping[str, Optional[AttackConfig]],
    defenses: Sequence[DefenseMechanism],
    checkpoints: Mapping[int, Network],
    dataset,
    n: int,
    seed: int = 0,
    jobs: Optional[int] = 1,
    dataset_name: str = "digits",
    max_val: float = 1.0,
) -> Tuple[ResultTable, List[dict]]:
    """Best-over-grid mean PSNR for every attack, defense and checkpoint.

    ``attacks`` maps names to attack templates; a template of None (or the name
    ``analytic``) selects the analytic inversion. Released gradients are shared by all
    attacks of a (checkpoint, defense, example) triple, and every attack starts from the
    same initial input per example. Failures are recorded, never raised.
    """
    if not checkpoints:
        raise ValueError("run_matrix needs at least one checkpoint")
    rows, records = [], []
    if not attacks:
        return ResultTable(rows), records
    examples = first_examples(dataset, n)
    if not examples:
        raise ValueError("the dataset has no examples")

    for train_step in sorted(checkpoints):
        net = checkpoints[train_step]
        true_grads = [net.loss_and_param_grad(example)[1] for example in examples]
        for d, defense in enumerate(defenses):
            released = [
                sample(defense, g, _example_seed(seed, train_step, d, i), net.segments)
                for i, g in enumerate(true_grads)
            ]
            for attack_name in sorted(attacks):
                template = attacks[attack_name]
                analytic = (
                    attack_name == "analytic"
                    or template is None
                    or (template.conditional == "bayes" and defense.kind == "none")
                )
                configs, beta_star = [None], None
                if not analytic:
                    if template.conditional == "bayes":
                        template = template.replace(defense=defense)
                    if grid.calibrate:
                        cases = [
                            CalibrationCase(released[i], net, examples[i].x, max_val)
                            for i in range(min(grid.calibration_examples, len(examples)))
                        ]
                        try:
                            beta_star, _ = calibrate_beta(template, cases, jobs=jobs)
                        except Exception as error:
                            rows.append(
                                ResultRow(dataset_name, defense.label, attack_name, train_step,
                                          float("nan"), len(examples), len(examples),
                                          reason=f"beta calibration failed: {error}")
                            )
                            continue
                    configs = grid.expand(template, beta_star)

                items = []
                for config in configs:
                    for i, example in enumerate(examples):
                        run_config = (
                            None
                            if config is None
                            else config.replace(seed=_example_seed(seed, i))
                        )
                        items.append((run_config, released[i], net, example.x, max_val))
                logger.info(
                    f"step {train_step}, {defense.label}, {attack_name}: "
                    f"{len(configs)} configurations x {len(examples)} examples"
                )
                outcomes = run_parallel(_matrix_item, items, jobs=jobs, desc=attack_name)

                best = None
                for c, config in enumerate(configs):
                    chunk = outcomes[c * len(examples) : (c + 1) * len(examples)]
                    for i, (value, error) in enumerate(chunk):
                        records.append(
                            {
                                "dataset": dataset_name,
                                "defense": defense.label,
                                "attack": attack_name,
                                "train_step": train_step,
                                "example": i,
                                **_grid_params(config),
                                "psnr": value,
                                "error": error,
                            }
                        )
                    scores = [value for value, _ in chunk if value is not None]
                    failures = len(chunk) - len(scores)
                    if not scores:
                        continue
                    mean_psnr = float(np.mean(scores))
                    if best is None or mean_psnr > best[0]:
                        best = (mean_psnr, failures, config)

                if best is None:
                    errors = sorted({error for _, error in outcomes if error})
                    rows.append(
                        ResultRow(dataset_name, defense.label, attack_name, train_step,
                                  float("nan"), len(examples), len(examples),
                                  reason="; ".join(errors)[:500])
                    )
                    continue
                mean_psnr, failures, config = best
                params = _grid_params(config)
                if beta_star is not None:
                    params["beta_star"] = beta_star
                rows.append(
                    ResultRow(dataset_name, defense.label, attack_name, train_step,
                              mean_psnr, len(examples), failures, best_params=params)
                )
    return ResultTable(rows), records
