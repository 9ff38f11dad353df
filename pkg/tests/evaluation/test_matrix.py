import math

import pytest

from bayesleak.attacks import AttackConfig
from bayesleak.data import load_digits
from bayesleak.defenses import DefenseMechanism
from bayesleak.evaluation.grid import PRESETS, ExperimentGrid
from bayesleak.evaluation.matrix import COLUMNS, ResultRow, ResultTable, run_matrix
from bayesleak.models import Network, NetworkSpec

from ..testconfig import RUN_EXPERIMENTS, tmp_folder
from .helpers import tiny_dataset, tiny_network

GAUSSIAN = DefenseMechanism("gaussian", sigma=0.1)
DEFENSES = [DefenseMechanism("none"), GAUSSIAN]
ATTACKS = {
    "analytic": None,
    "bayes": AttackConfig(conditional="bayes", defense=GAUSSIAN, steps=3),
    "l2": AttackConfig(steps=3),
}


def small_matrix(**kwargs):
    return run_matrix(
        ExperimentGrid(lrs=(0.05, 0.1)),
        ATTACKS,
        DEFENSES,
        {0: tiny_network()},
        tiny_dataset(),
        n=3,
        seed=1,
        dataset_name="tiny",
        **kwargs,
    )


def test_every_cell_is_filled():
    table, records = small_matrix()
    assert len(table) == len(DEFENSES) * len(ATTACKS)
    frame = table.to_frame()
    assert list(frame.columns) == COLUMNS
    assert set(frame["dataset"]) == {"tiny"}
    # one configuration for analytic cells (bayes without noise included), two otherwise
    assert len(records) == 3 * (1 + 1 + 2) + 3 * (1 + 2 + 2)
    row = table.cell(GAUSSIAN.label, "l2")
    assert row.best_params["lr"] in (0.05, 0.1)
    assert row.n == 3
    assert row.failures == 0


def test_undefended_bayes_cell_is_analytic():
    table, _ = small_matrix()
    assert table.cell("none", "bayes").mean_psnr > 100
    assert table.cell("none", "analytic").mean_psnr > 100
    assert table.cell("none", "bayes").best_params == {}


def test_reproducible():
    a, records_a = small_matrix()
    b, records_b = small_matrix()
    assert a.to_records() == b.to_records()
    assert records_a == records_b


def test_failures_are_recorded():
    broken = {"l2": AttackConfig(steps=3, layer_mask={0, 1})}
    table, records = run_matrix(
        ExperimentGrid(), broken, [GAUSSIAN], {0: tiny_network()}, tiny_dataset(), n=2
    )
    row = table.cell(GAUSSIAN.label, "l2")
    assert math.isnan(row.mean_psnr)
    assert row.failures == 2
    assert "layer mask" in row.reason
    assert all(record["error"] for record in records)


def test_table_output():
    rows = [
        ResultRow("d", "none", "l2", 500, 10.0, 2, 0),
        ResultRow("d", "none", "l2", 0, float("nan"), 2, 2, reason="x"),
    ]
    table = ResultTable(rows)
    assert [row.train_step for row in table.rows] == [0, 500]
    path = tmp_folder / "matrix.csv"
    table.to_csv(path)
    assert path.read_text().splitlines()[1].endswith(",nan,2,2")
    with pytest.raises(KeyError):
        table.cell("none", "l1")


def test_needs_a_checkpoint():
    with pytest.raises(ValueError):
        run_matrix(ExperimentGrid(), ATTACKS, DEFENSES, {}, tiny_dataset(), n=1)


@pytest.mark.skipif(not RUN_EXPERIMENTS, reason="slow experiment")
def test_bayes_beats_l2_under_pruning():
    prune = DefenseMechanism("prune_gaussian", prune_rate=0.5, sigma=0.1)
    template = AttackConfig(steps=200, lr_decay=0.995, beta=1e-4)
    table, _ = run_matrix(
        PRESETS["table2-desk"],
        {"bayes": template.replace(conditional="bayes", defense=prune), "l2": template},
        [prune],
        {0: Network(NetworkSpec((64, 100, 10), seed=0))},
        load_digits(),
        n=30,
        jobs=0,
    )
    bayes = table.cell(prune.label, "bayes")
    l2 = table.cell(prune.label, "l2")
    assert bayes.failures == l2.failures == 0
    assert bayes.mean_psnr - l2.mean_psnr >= 1.0
