import numpy as np
import pytest

from tabrebal import autodiff as ad
from tabrebal.errors import ShapeError
from tabrebal.nn import ParamSet, dense

from oracles import central_difference, relative_error


def test_dense_zero_weights_identity_activation():
    x = ad.Tensor(np.random.default_rng(0).random((5, 3)))
    w = ad.Tensor(np.zeros((3, 4)), requires_grad=True)
    b = ad.Tensor(np.zeros(4), requires_grad=True)
    out = dense(x, w, b, "identity")
    assert np.all(out.value == 0.0)


def test_sigmoid_at_zero():
    assert ad.sigmoid(ad.Tensor(0.0)).item() == pytest.approx(0.5)


def test_dense_shape_mismatch_raises():
    x = ad.Tensor(np.ones((2, 3)))
    w = ad.Tensor(np.ones((4, 2)), requires_grad=True)
    b = ad.Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ShapeError):
        dense(x, w, b)


@pytest.mark.parametrize("seed", range(5))
def test_dense_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = ad.Tensor(rng.normal(size=(3, 3)))
    w = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=4), requires_grad=True)

    def forward():
        return (dense(x, w, b, "sigmoid") * ad.constant(coeffs)).sum()

    coeffs = rng.normal(size=(3, 4))
    out = forward()
    gw, gb = ad.grad(out, [w, b])
    num_w, num_b = central_difference(lambda: forward().item(), [w.value, b.value])
    assert relative_error(gw.value, num_w) < 1e-5
    assert relative_error(gb.value, num_b) < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_composite_expression_gradients(seed):
    """Exercises matmul, concat, slicing, softmax, relu, div, log, broadcast."""
    rng = np.random.default_rng(100 + seed)
    a = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    c = ad.Tensor(rng.normal(size=5), requires_grad=True)

    def forward():
        h = ad.matmul(ad.tanh(a), b) + c
        s = ad.softmax(h[:, :3], axis=-1)
        joined = ad.concat([s, ad.relu(h[:, 3:])], axis=1)
        return (ad.log(joined.sum(axis=1) + 1.0) / 2.0).mean()

    out = forward()
    grads = ad.grad(out, [a, b, c])
    nums = central_difference(lambda: forward().item(), [a.value, b.value, c.value])
    for got, want in zip(grads, nums):
        assert relative_error(got.value, want) < 1e-5


def test_second_order_grad_of_grad():
    """d/dx of (df/dx) for f = sum(x^3) is 6x."""
    x = ad.Tensor(np.array([1.0, 2.0, -3.0]), requires_grad=True)
    f = (x * x * x).sum()
    (g,) = ad.grad(f, [x])
    (h,) = ad.grad(g.sum(), [x])
    assert np.allclose(h.value, 6.0 * x.value)


def test_grad_returns_zero_for_unused_input():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.Tensor(np.ones(3), requires_grad=True)
    (gy,) = ad.grad((x * x).sum(), [y])
    assert np.all(gy.value == 0.0)


def test_grad_rejects_nonscalar_output():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        ad.grad(x * 2.0, [x])


def test_paramset_serialization_roundtrip_is_byte_identical():
    rng = np.random.default_rng(7)
    ps = ParamSet(seed=7)
    ps.add_dense("layer", 4, 3, rng)
    raw = ps.to_bytes()
    again = ParamSet.from_bytes(raw)
    assert again.to_bytes() == raw
    assert again.names() == ps.names()
    for t1, t2 in zip(ps.tensors(), again.tensors()):
        assert np.array_equal(t1.value, t2.value)
