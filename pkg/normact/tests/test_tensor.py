import math

import numpy
import pytest

from normact import algo, tensor
from normact.validate import ContractError, DimensionError, EmptyReductionError, NumericError


def test_matmul_shape_error_names_shapes():
    a = tensor.tensor(numpy.ones((2, 3)))
    with pytest.raises(DimensionError, match=r"matmul: cannot multiply \[2, 3\] by \[2, 3\]"):
        tensor.matmul(a, a)


def test_add_shape_error():
    with pytest.raises(DimensionError):
        tensor.add(tensor.tensor([1.0, 2.0]), tensor.tensor([1.0, 2.0, 3.0]))


def test_product_gradients():
    a = tensor.tensor([1.0, 2.0, 3.0], requires_grad=True)
    b = tensor.tensor([4.0, 5.0, 6.0], requires_grad=True)
    (a * b).sum().backward()
    numpy.testing.assert_array_equal(a.grad, [4.0, 5.0, 6.0])
    numpy.testing.assert_array_equal(b.grad, [1.0, 2.0, 3.0])


def test_fan_out_accumulates():
    x = tensor.tensor([1.0, -2.0, 0.5], requires_grad=True)
    y = x * x + x
    y.sum().backward()
    numpy.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_matmul_gradients():
    rng = numpy.random.default_rng(0)
    a = tensor.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = tensor.tensor(rng.normal(size=(4, 2)), requires_grad=True)
    tensor.matmul(a, b).sum().backward()
    numpy.testing.assert_allclose(a.grad, numpy.ones((3, 2)) @ b.data.T)
    numpy.testing.assert_allclose(b.grad, a.data.T @ numpy.ones((3, 2)))


def test_gradients_accumulate_until_zeroed():
    x = tensor.tensor([1.0, 2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    numpy.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_backward_needs_scalar():
    x = tensor.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        tensor.backward(x * 2.0)


def test_backward_needs_grad():
    with pytest.raises(ContractError):
        tensor.backward(tensor.tensor([1.0, 2.0]).sum())


def test_long_chain_is_not_recursive():
    x = tensor.tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 1.0
    y.sum().backward()
    numpy.testing.assert_array_equal(x.grad, [1.0])


def test_bias_add_and_channel_scale():
    x = tensor.tensor(numpy.arange(12.0).reshape(2, 3, 2), requires_grad=True)
    g = tensor.tensor([1.0, 2.0, 3.0], requires_grad=True)
    b = tensor.tensor([0.5, 0.5, 0.5], requires_grad=True)
    out = tensor.bias_add(tensor.channel_scale(x, g, axis=1), b, axis=1)
    numpy.testing.assert_allclose(out.data[:, 1], 2.0 * x.data[:, 1] + 0.5)
    out.sum().backward()
    numpy.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])
    numpy.testing.assert_allclose(g.grad, x.data.sum(axis=(0, 2)))
    numpy.testing.assert_allclose(x.grad[:, 2], 3.0)


def test_bias_add_shape_error():
    with pytest.raises(DimensionError):
        tensor.bias_add(tensor.tensor(numpy.ones((2, 3))), tensor.tensor(numpy.ones(2)))


def test_mean_and_reshape():
    x = tensor.tensor(numpy.arange(6.0), requires_grad=True)
    x.reshape(2, 3).mean().backward()
    numpy.testing.assert_allclose(x.grad, numpy.full(6, 1.0 / 6))


def test_cross_entropy_uniform():
    loss = tensor.cross_entropy_loss(tensor.tensor(numpy.zeros((4, 10))), [0, 3, 5, 9])
    assert loss.item() == pytest.approx(math.log(10))


def test_cross_entropy_confident():
    logits = numpy.zeros((2, 3))
    logits[0, 1] = logits[1, 2] = 1e4
    loss = tensor.cross_entropy_loss(tensor.tensor(logits), [1, 2])
    assert loss.item() == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = numpy.random.default_rng(1)
    logits = tensor.tensor(rng.normal(size=(5, 4)), requires_grad=True)
    labels = numpy.array([0, 1, 2, 3, 1])
    tensor.cross_entropy_loss(logits, labels).backward()

    def f():
        return tensor.cross_entropy_loss(tensor.Tensor(logits.data), labels).item()

    errors = algo.check_gradient(f, logits.data, logits.grad)
    assert errors.max() < 1e-5


@pytest.mark.parametrize("labels", [[0, 3], [-1, 0], [0.0, 1.0]])
def test_cross_entropy_bad_labels(labels):
    with pytest.raises(ValueError):
        tensor.cross_entropy_loss(tensor.tensor(numpy.zeros((2, 3))), labels)


def test_reduce_moments_mask():
    x = numpy.array([1.0, 100.0, 3.0, -50.0])
    mean, var, count = tensor.reduce_moments(x, mask=[True, False, True, False])
    assert (mean, var, count) == (2.0, 1.0, 2)


def test_reduce_moments_all_masked():
    with pytest.raises(EmptyReductionError):
        tensor.reduce_moments([1.0, 2.0], mask=[False, False])


def test_check_finite_toggle():
    x = tensor.tensor([1000.0])
    with pytest.raises(NumericError, match=r"index \(0,\)"):
        tensor.elementwise(x, numpy.exp, numpy.exp)
    old = tensor.set_check_finite(False)
    try:
        assert numpy.isinf(tensor.elementwise(x, numpy.exp, numpy.exp).item())
    finally:
        tensor.set_check_finite(old)


def test_matmul_by_hand():
    out = tensor.matmul(tensor.tensor([[1.0, 2.0], [3.0, 4.0]]), tensor.tensor([[1.0], [1.0]]))
    numpy.testing.assert_array_equal(out.data, [[3.0], [7.0]])


@pytest.mark.parametrize(
    ("x", "mask", "expected"),
    [
        ([1.0, 1.0, 1.0, 1.0], None, (1.0, 0.0, 4)),
        ([0.0, 2.0], None, (1.0, 1.0, 2)),
        ([0.0, 2.0, 99.0], [True, True, False], (1.0, 1.0, 2)),
    ],
)
def test_reduce_moments_by_hand(x, mask, expected):
    assert tensor.reduce_moments(x, mask=mask) == expected


def test_elementwise_square():
    x = tensor.parameter([1.0, 2.0, 3.0])
    y = tensor.elementwise(x, numpy.square, lambda v: 2.0 * v)
    numpy.testing.assert_array_equal(y.data, [1.0, 4.0, 9.0])
    y.sum().backward()
    numpy.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_elementwise_identity():
    x = tensor.parameter([-1.5, 0.0, 2.0])
    y = tensor.elementwise(x, lambda v: v, numpy.ones_like)
    numpy.testing.assert_array_equal(y.data, x.data)
    y.sum().backward()
    numpy.testing.assert_array_equal(x.grad, numpy.ones(3))


def test_sum_of_squares_gradient():
    w = tensor.parameter([1.0, -2.0, 3.0])
    (w * w).sum().backward()
    numpy.testing.assert_array_equal(w.grad, [2.0, -4.0, 6.0])


def test_sum_gradient_is_ones():
    w = tensor.parameter(numpy.arange(6.0).reshape(2, 3))
    w.sum().backward()
    numpy.testing.assert_array_equal(w.grad, numpy.ones((2, 3)))


def test_matmul_matches_finite_differences():
    rng = numpy.random.default_rng(2)
    a = tensor.parameter(rng.normal(size=(5, 7)))
    b = tensor.parameter(rng.normal(size=(7, 3)))
    c = tensor.Tensor(rng.normal(size=(5, 3)))
    (tensor.matmul(a, b) * c).sum().backward()

    def f():
        return (tensor.matmul(tensor.Tensor(a.data), tensor.Tensor(b.data)) * c).sum().item()

    for p in (a, b):
        assert algo.check_gradient(f, p.data, p.grad, steps=(1e-2,)).max() < 1e-6


def test_tanh_matches_finite_differences():
    rng = numpy.random.default_rng(3)
    x = tensor.parameter(rng.uniform(-3.0, 3.0, size=1000))
    tensor.elementwise(x, numpy.tanh, lambda v: 1.0 - numpy.tanh(v) ** 2).sum().backward()
    h = 1e-5
    numeric = (numpy.tanh(x.data + h) - numpy.tanh(x.data - h)) / (2 * h)
    assert algo.relative_error(x.grad, numeric).max() < 1e-6


def two_layer_loss(x, w1, b1, w2, c):
    hidden = tensor.elementwise(
        tensor.bias_add(tensor.matmul(x, w1), b1), numpy.tanh, lambda v: 1.0 - numpy.tanh(v) ** 2
    )
    return (tensor.matmul(hidden, w2) * c).sum()


def two_layer_params(seed):
    rng = numpy.random.default_rng(seed)
    x = tensor.Tensor(rng.normal(size=(4, 5)))
    params = [
        tensor.parameter(0.5 * rng.normal(size=(5, 6))),
        tensor.parameter(0.1 * rng.normal(size=6)),
        tensor.parameter(0.5 * rng.normal(size=(6, 3))),
    ]
    c = tensor.Tensor(rng.normal(size=(4, 3)))
    return x, params, c


def test_two_layer_chain_matches_finite_differences():
    x, params, c = two_layer_params(4)
    two_layer_loss(x, *params, c).backward()

    def f():
        return two_layer_loss(x, *[tensor.Tensor(p.data) for p in params], c).item()

    for p in params:
        assert algo.check_gradient(f, p.data, p.grad, steps=(1e-4, 1e-5, 1e-6)).max() < 1e-5


def test_backward_is_deterministic():
    grads = []
    for _ in range(2):
        x, params, c = two_layer_params(5)
        two_layer_loss(x, *params, c).backward()
        grads.append([p.grad for p in params])
    for first, second in zip(*grads):
        numpy.testing.assert_array_equal(first, second)


def test_accumulation_is_linear():
    x, params, c = two_layer_params(6)
    separate = []
    for scale in (1.0, -2.5):
        for p in params:
            p.zero_grad()
        (two_layer_loss(x, *params, c) * scale).backward()
        separate.append([p.grad.copy() for p in params])

    for p in params:
        p.zero_grad()
    two_layer_loss(x, *params, c).backward()
    (two_layer_loss(x, *params, c) * -2.5).backward()
    for p, g1, g2 in zip(params, *separate):
        numpy.testing.assert_allclose(p.grad, g1 + g2, rtol=1e-12, atol=1e-14)
