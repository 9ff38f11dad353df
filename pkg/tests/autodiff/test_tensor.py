import numpy as np
import pytest

from bayesleak.autodiff import (
    NonFiniteError,
    Tensor,
    UnsupportedPrimitiveError,
    concat,
    constant,
    debug_checks,
    grad,
    sum_to,
)

from ..oracles import central_differences, relative_error


def test_leaves_are_read_only_float64():
    t = Tensor([1, 2, 3])
    assert t.data.dtype == np.float64
    with pytest.raises(ValueError):
        t.data[0] = 5.0
    # constant copies
    a = np.array([1.0, 2.0])
    c = constant(a)
    a[0] = 10.0
    assert c.data[0] == 1.0


def test_leaf_finiteness_is_always_checked():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        Tensor(np.inf)


def test_debug_checks_on_operation_results():
    x = Tensor([0.0, 1.0])
    with debug_checks(False):
        with np.errstate(divide="ignore"):
            y = x.log()
        assert np.isneginf(y.data[0])
    with debug_checks(True):
        with np.errstate(divide="ignore"):
            with pytest.raises(NonFiniteError):
                x.log()


def test_numpy_on_the_left_defers_to_tensor():
    x = Tensor([1.0, 2.0])
    for result in (np.ones(2) + x, np.ones(2) * x, np.ones(2) - x, np.ones(2) / x):
        assert isinstance(result, Tensor)
    np.testing.assert_array_equal((np.ones(2) - x).data, [0.0, -1.0])


def test_only_squaring():
    x = Tensor([3.0])
    assert (x**2).item() == 9.0
    with pytest.raises(ValueError):
        x**3


def test_broadcast_gradients_are_summed():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    b = Tensor([1.0, 2.0, 3.0])
    ga, gb = grad((a * b).sum(), [a, b])
    np.testing.assert_allclose(ga.data, np.broadcast_to(b.data, (2, 3)))
    np.testing.assert_allclose(gb.data, a.data.sum(axis=0))

    s = Tensor(2.0)
    (gs,) = grad((a * s).sum(), [s])
    assert gs.shape == ()
    assert gs.item() == pytest.approx(a.data.sum())


def test_sum_to():
    t = Tensor(np.ones((4, 2, 3)))
    assert sum_to(t, (3,)).shape == (3,)
    np.testing.assert_allclose(sum_to(t, (2, 1)).data, np.full((2, 1), 12.0))
    assert sum_to(t, (4, 2, 3)) is t


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((4, 3))
    B = rng.standard_normal((3, 2))
    v = rng.standard_normal(3)
    w = rng.standard_normal(4)

    def f(a):
        a = Tensor(a.reshape(4, 3))
        return ((a @ Tensor(B)).exp().sum() + (Tensor(w) @ a @ Tensor(v))).item()

    a = Tensor(A)
    out = (a @ Tensor(B)).exp().sum() + (Tensor(w) @ a @ Tensor(v))
    g = grad(out, a)
    fd = central_differences(lambda flat: f(flat), A.reshape(-1)).reshape(4, 3)
    assert relative_error(g.data, fd) < 1e-7


def test_matmul_rejects_higher_rank():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 2, 2))) @ Tensor(np.ones((2, 2)))


def test_elementwise_gradients():
    rng = np.random.default_rng(1)
    x0 = rng.uniform(0.5, 2.0, size=5)

    def build(x):
        return (
            x.log() * x.sqrt() + (x * 0.3).exp() / (1.0 + x) - x.abs() + (x - 1.0).relu()
        ).sum()

    x = Tensor(x0)
    g = grad(build(x), x)
    fd = central_differences(lambda v: build(Tensor(v)).item(), x0)
    assert relative_error(g.data, fd) < 1e-7


def test_clip_gradient_is_zero_outside():
    x = Tensor([-2.0, 0.5, 3.0])
    g = grad(x.clip(-1.0, 1.0).sum(), x)
    np.testing.assert_array_equal(g.data, [0.0, 1.0, 0.0])


def test_relu_subgradient_at_zero():
    x = Tensor([-1.0, 0.0, 1.0])
    g = grad(x.relu().sum(), x)
    np.testing.assert_array_equal(g.data, [0.0, 0.0, 1.0])


def test_sign_has_no_derivative():
    x = Tensor([1.0, -2.0])
    np.testing.assert_array_equal(x.sign().data, [1.0, -1.0])
    with pytest.raises(UnsupportedPrimitiveError):
        grad((x.sign() * x).sum(), x)
    # a constant sign is fine
    g = grad((Tensor(np.sign(x.data)) * x).sum(), x)
    np.testing.assert_array_equal(g.data, [1.0, -1.0])


def test_take_scatters_back_repeated_indices():
    x = Tensor([1.0, 2.0, 3.0])
    y = x.take([0, 0, 2])
    np.testing.assert_array_equal(y.data, [1.0, 1.0, 3.0])
    g = grad((y * Tensor([1.0, 2.0, 3.0])).sum(), x)
    np.testing.assert_array_equal(g.data, [3.0, 0.0, 3.0])
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 2))).take([0])


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)))
    b = Tensor([1.0, 2.0])
    c = concat([a, b])
    assert c.shape == (6,)
    ga, gb = grad((c * Tensor(np.arange(6.0))).sum(), [a, b])
    np.testing.assert_array_equal(ga.data, [[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_array_equal(gb.data, [4.0, 5.0])
    with pytest.raises(ValueError):
        concat([])


def test_reshape_transpose_sum_axis():
    x = Tensor(np.arange(6.0))
    m = x.reshape((2, -1))
    assert m.shape == (2, 3)
    assert m.T.shape == (3, 2)
    np.testing.assert_array_equal(m.sum(axis=0).data, [3.0, 5.0, 7.0])
    g = grad((m.T.sum(axis=1) * Tensor([1.0, 2.0, 3.0])).sum(), x)
    np.testing.assert_array_equal(g.data, [1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
    assert x.flatten() is not x
    assert len(m) == 2
