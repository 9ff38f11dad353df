import numpy as np
import pytest

from bayesleak.autodiff import Tensor, grad
from bayesleak.priors import PriorSpec, log_prior, range_error, total_variation

from .oracles import central_differences, relative_error


def test_validation():
    with pytest.raises(ValueError):
        PriorSpec("tv_aniso")
    with pytest.raises(ValueError):
        PriorSpec("tv_plus_range", image_shape=(2, 2))
    with pytest.raises(ValueError):
        PriorSpec("tv_plus_range", phi=1.5, image_shape=(2, 2))
    with pytest.raises(ValueError):
        PriorSpec("gaussian_unit", phi=0.5)
    with pytest.raises(ValueError):
        PriorSpec("tv_aniso", image_shape=(2, 2, 2))
    with pytest.raises(ValueError):
        PriorSpec("smooth")


def test_label_and_round_trip():
    prior = PriorSpec("tv_plus_range", phi=0.25, image_shape=[4, 4])
    assert prior.image_shape == (4, 4)
    assert prior.label == "tv_plus_range(phi=0.25)"
    assert PriorSpec.from_dict(prior.to_dict()) == prior
    assert PriorSpec().to_dict() == {"kind": "uniform"}
    with pytest.raises(ValueError):
        PriorSpec.from_dict({"kind": "uniform", "weight": 1.0})


def test_values():
    x = np.array([0.0, 1.0, 1.0, 1.0])
    assert log_prior(PriorSpec(), x).item() == 0.0
    assert log_prior(PriorSpec("gaussian_unit"), x).item() == pytest.approx(-1.5)
    assert log_prior(PriorSpec("laplacian_unit"), -x).item() == pytest.approx(-3.0)
    assert log_prior(PriorSpec("tv_aniso", image_shape=(2, 2)), x).item() == pytest.approx(-2.0)
    assert log_prior(PriorSpec("pixel_range"), x).item() == 0.0
    y = np.array([1.5, -2.0, 0.5, 0.0])
    assert log_prior(PriorSpec("pixel_range"), y).item() == pytest.approx(-np.sqrt(4.25))
    combined = log_prior(PriorSpec("tv_plus_range", phi=0.25, image_shape=(2, 2)), y)
    tv = total_variation(Tensor(y), (2, 2)).item()
    assert combined.item() == pytest.approx(-(0.25 * tv + 0.75 * np.sqrt(4.25)))


def test_tv_has_no_wraparound():
    # a vertical edge: only the horizontal differences across it count
    image = np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]])
    assert total_variation(Tensor(image.ravel()), (3, 2)).item() == pytest.approx(3.0)
    assert total_variation(Tensor(np.full(12, 0.3)), (3, 4)).item() == 0.0


def test_priors_are_non_positive():
    rng = np.random.default_rng(0)
    for kind in ("gaussian_unit", "laplacian_unit", "pixel_range"):
        assert log_prior(PriorSpec(kind), rng.standard_normal(16)).item() <= 0.0
    for prior in (PriorSpec("tv_aniso", image_shape=(4, 4)), PriorSpec("tv_plus_range", phi=0.5, image_shape=(4, 4))):
        assert log_prior(prior, rng.standard_normal(16)).item() <= 0.0


def test_in_range_gradient_is_zero():
    x = Tensor([0.2, 0.5, 0.9])
    value = log_prior(PriorSpec("pixel_range"), x)
    np.testing.assert_array_equal(grad(value, x).data, 0.0)
    assert range_error(x).item() == 0.0
    uniform = log_prior(PriorSpec(), x)
    np.testing.assert_array_equal(grad(uniform, x).data, 0.0)


@pytest.mark.parametrize(
    "prior",
    [
        PriorSpec("gaussian_unit"),
        PriorSpec("laplacian_unit"),
        PriorSpec("tv_aniso", image_shape=(3, 3)),
        PriorSpec("pixel_range"),
        PriorSpec("tv_plus_range", phi=0.3, image_shape=(3, 3)),
    ],
    ids=lambda p: p.kind,
)
def test_gradients_match_finite_differences(prior):
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1.0, 2.0, size=9)
    x = Tensor(x0)
    g = grad(log_prior(prior, x), x)
    fd = central_differences(lambda v: log_prior(prior, v).item(), x0)
    assert relative_error(g.data, fd) < 1e-6


def test_image_shape_mismatch():
    with pytest.raises(ValueError):
        log_prior(PriorSpec("tv_aniso", image_shape=(3, 3)), np.zeros(8))
