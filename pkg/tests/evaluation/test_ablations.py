import matplotlib.pyplot as plt
import numpy as np
import pytest

from bayesleak.evaluation.ablations import (
    TraceSummary,
    layer_drop_comparison,
    mc_ablation,
    mc_ablation_configs,
    synthetic_ablation,
    synthetic_variants,
)

from ..testconfig import RUN_EXPERIMENTS, output_folder
from .helpers import tiny_dataset, tiny_network


def test_synthetic_variants():
    variants = synthetic_variants(b=0.1)
    assert list(variants) == [
        "gaussian+gaussian",
        "gaussian+laplacian",
        "laplacian+gaussian",
        "laplacian+laplacian",
    ]
    prior, conditional = variants["laplacian+gaussian"]
    assert prior.kind == "laplacian_unit"
    assert conditional.sigma == pytest.approx(0.1 * np.sqrt(2))


def test_synthetic_ablation_shapes():
    summaries = synthetic_ablation(
        seed=0, steps=4, trials=2, dim=4, classes=3, hidden=8
    )
    assert len(summaries) == 4
    first_steps = set()
    for name, summary in summaries.items():
        assert summary.name == name
        assert summary.traces.shape == (2, 4)
        first_steps.add(tuple(summary.traces[:, 0]))
    # every variant starts from the same input
    assert len(first_steps) == 1

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, summary in summaries.items():
        ax.plot(summary.mean, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("distance to the input")
    ax.legend()
    plt.savefig(output_folder / "synthetic_ablation.png")
    plt.close()


def test_mc_ablation_shapes():
    summaries = mc_ablation(
        k_values=[1, 3],
        trials=2,
        delta=0.5,
        steps=3,
        dataset=tiny_dataset(),
        net=tiny_network(),
    )
    assert list(summaries) == [1, 3]
    assert summaries[3].traces.shape == (2, 3)
    np.testing.assert_array_equal(summaries[1].traces[:, 0], summaries[3].traces[:, 0])
    frame = summaries[1].to_frame("psnr")
    assert list(frame.columns) == ["step", "mean_psnr", "stderr_psnr"]


def test_mc_ablation_arguments():
    with pytest.raises(ValueError):
        mc_ablation(k_values=[4, 1], dataset=tiny_dataset(), net=tiny_network())
    with pytest.raises(ValueError):
        mc_ablation(trials=0, dataset=tiny_dataset(), net=tiny_network())
    configs = mc_ablation_configs([1, 8], delta=2.0)
    assert configs[8].k == 8 and configs[8].delta == 2.0
    assert configs[1].defense.kind == "gaussian"


def test_trace_summary():
    summary = TraceSummary("x", np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(summary.mean, [2.0, 3.0])
    assert summary.final_mean == 3.0
    assert summary.final_stderr == pytest.approx(1.0)
    single = TraceSummary("y", np.array([[1.0, 2.0]]))
    assert single.final_stderr == 0.0


def test_synthetic_ablation_arguments():
    with pytest.raises(ValueError):
        synthetic_ablation(trials=0)
    with pytest.raises(ValueError):
        synthetic_ablation(steps=2, trials=1, dim=4, classes=3, hidden=8, weight_scale=0.0)


def test_layer_drop_comparison_shapes():
    comparison = layer_drop_comparison(
        trials=2, dataset=tiny_dataset(), hidden=(6, 6), steps=3
    )
    assert comparison.defended_layer == 1
    assert comparison.drop_psnr.shape == comparison.plain_psnr.shape == (2,)
    assert set(comparison.selected_layers) <= {0, 1, 2}
    assert 0.0 <= comparison.hit_rate <= 1.0
    np.testing.assert_allclose(
        comparison.mean_gain, np.mean(comparison.drop_psnr - comparison.plain_psnr)
    )
    frame = comparison.to_frame()
    assert list(frame.columns) == ["trial", "drop_psnr", "plain_psnr", "selected_layer"]
    with pytest.raises(ValueError):
        layer_drop_comparison(trials=1, dataset=tiny_dataset(), hidden=(6, 6), defended_layer=3)
    with pytest.raises(ValueError):
        layer_drop_comparison(trials=0, dataset=tiny_dataset())


@pytest.mark.skipif(not RUN_EXPERIMENTS, reason="slow experiment")
def test_matching_prior_and_conditional_win():
    summaries = synthetic_ablation(seed=0, steps=200, trials=20, jobs=0)
    matched = summaries["gaussian+laplacian"]
    for name, summary in summaries.items():
        if name == "gaussian+laplacian":
            continue
        margin = max(summary.final_stderr, matched.final_stderr)
        assert summary.final_mean - matched.final_mean >= margin, name


@pytest.mark.skipif(not RUN_EXPERIMENTS, reason="slow experiment")
def test_more_samples_do_not_hurt():
    summaries = mc_ablation(k_values=[1, 4, 16], trials=20, steps=200, jobs=0)
    for k, summary in summaries.items():
        assert summary.final_mean > summary.mean[0], k
    for fewer, more in ((1, 4), (4, 16)):
        assert (
            summaries[more].final_mean
            >= summaries[fewer].final_mean - summaries[fewer].final_stderr
        )


@pytest.mark.skipif(not RUN_EXPERIMENTS, reason="slow experiment")
def test_dropping_the_defended_layer_beats_plain_matching():
    comparison = layer_drop_comparison(trials=20, jobs=0)
    assert comparison.mean_gain >= 2.0
    assert comparison.hit_rate >= 0.8
