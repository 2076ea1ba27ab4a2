import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import numeric_grad, rel_err
from photonic_nas import tensor as T
from photonic_nas.errors import ContractError, DegenerateBatchError, DimensionError, ParameterError
from photonic_nas.tensor import Tensor


def check_grad(build, *arrays_, tol=1e-4):
    """Compare tape gradients of ``sum(w * build(*tensors))`` with central differences."""
    rng = np.random.default_rng(0)
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays_]
    out = build(*tensors)
    w = rng.normal(size=out.shape)

    def loss_value():
        return float(np.sum(w * build(*[Tensor(t.data) for t in tensors]).data))

    loss = (build(*tensors) * Tensor(w)).sum()
    T.backward(loss)
    for t in tensors:
        num = numeric_grad(loss_value, t.data)
        assert rel_err(t.grad, num) < tol


def test_linear_examples():
    y = T.linear(Tensor([[1.0, 2.0]]), Tensor(np.eye(2)), Tensor([0.0, 0.0]))
    np.testing.assert_array_equal(y.data, [[1, 2]])
    y = T.linear(Tensor([[1.0, 1.0]]), Tensor([[2.0], [3.0]]), Tensor([1.0]))
    np.testing.assert_array_equal(y.data, [[6]])


def test_linear_shape_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(1, 3\).*\(2, 2\)"):
        T.linear(Tensor(np.ones((1, 3))), Tensor(np.ones((2, 2))))


def test_conv_zero_kernel():
    y = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros((1, 1, 3, 3))))
    assert y.shape == (1, 1, 3, 3)
    assert np.all(y.data == 0)


def test_conv_channel_mismatch():
    with pytest.raises(DimensionError):
        T.conv2d(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.zeros((1, 1, 3, 3))))


def test_conv_matches_direct_loop(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    y = T.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 5, 4))
    for i in range(5):
        for j in range(4):
            ref[:, :, i, j] = np.einsum("bcij,ocij->bo", xp[:, :, i : i + 3, j : j + 3], w) + b
    np.testing.assert_allclose(y, ref, atol=1e-12)


@pytest.mark.parametrize("kind", ["relu", "silu", "tanh", "gelu", "sigmoid"])
def test_activation_gradients(kind, rng):
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
    check_grad(lambda t: T.activation(t, kind), x)


def test_gelu_is_tanh_approximation():
    x = np.linspace(-3, 3, 13)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(Tensor(x).gelu().data, ref, rtol=1e-14)


def test_unknown_activation():
    with pytest.raises(ValueError):
        T.activation(Tensor([1.0]), "swish")


def test_linear_conv_pool_gradients(rng):
    check_grad(lambda x, w, b: T.linear(x, w, b), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2))
    check_grad(
        lambda x, w, b: T.conv2d(x, w, b),
        rng.normal(size=(2, 2, 4, 4)),
        rng.normal(size=(3, 2, 3, 3)),
        rng.normal(size=3),
    )
    check_grad(T.max_pool2x2, rng.normal(size=(2, 2, 4, 6)))
    check_grad(T.adaptive_avg_pool1x1, rng.normal(size=(2, 3, 4, 4)))
    check_grad(lambda a, b: T.concat([a, b], axis=1), rng.normal(size=(2, 3)), rng.normal(size=(2, 2)))


def test_broadcast_arithmetic_gradients(rng):
    check_grad(lambda a, b: a * b + a - b, rng.normal(size=(3, 4)), rng.normal(size=(4,)))
    check_grad(lambda a, b: a / b, rng.normal(size=(3, 1)), rng.uniform(1, 2, size=(1, 4)))
    check_grad(lambda a, b: a @ b, rng.normal(size=(2, 3)), rng.normal(size=(3, 4)))
    check_grad(lambda a: (a.exp() + 2.0).log().mean(axis=0), rng.normal(size=(3, 4)))


def test_batchnorm_examples():
    gamma, beta = Tensor(np.ones(1)), Tensor(np.zeros(1))
    y = T.batch_norm(Tensor([[-1.0], [1.0]]), gamma, beta, np.zeros(1), np.ones(1), True)
    np.testing.assert_allclose(y.data.ravel(), [-1, 1], atol=1e-5)
    y = T.batch_norm(Tensor(np.full((4, 1), 3.0)), gamma, beta, np.zeros(1), np.ones(1), True)
    assert np.all(y.data == 0)


def test_batchnorm_running_stats_and_eval():
    rm, rv = np.zeros(2), np.ones(2)
    x = np.array([[0.0, 1.0], [2.0, 5.0], [4.0, 3.0]])
    T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True, momentum=0.1)
    np.testing.assert_allclose(rm, 0.1 * x.mean(0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(0, ddof=1))
    y = T.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, False)
    np.testing.assert_allclose(y.data, (x - rm) / np.sqrt(rv + 1e-5))


def test_batchnorm_degenerate_batch():
    with pytest.raises(DegenerateBatchError):
        T.batch_norm(Tensor([[1.0, 2.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), np.zeros(2), np.ones(2), True)


def test_batchnorm_gradients(rng):
    for shape in [(5, 3), (3, 2, 3, 3)]:
        C = shape[1]

        def f(x, g, b):
            return T.batch_norm(x, g, b, np.zeros(C), np.ones(C), True)

        check_grad(f, rng.normal(size=shape), rng.normal(size=C), rng.normal(size=C))


def test_dropout():
    x = Tensor(np.ones((4, 5)))
    assert np.array_equal(T.dropout(x, 0.0, True, np.random.default_rng(0)).data, x.data)
    assert np.array_equal(T.dropout(x, 0.7, False, np.random.default_rng(0)).data, x.data)
    y = T.dropout(Tensor(np.ones((200, 50))), 0.3, True, np.random.default_rng(0)).data
    assert set(np.unique(y)) <= {0.0, 1 / 0.7}
    assert abs(y.mean() - 1.0) < 0.05
    with pytest.raises(ParameterError):
        T.dropout(x, 1.0, True, np.random.default_rng(0))


def test_pool_examples():
    assert T.max_pool2x2(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])).data.item() == 4.0
    assert np.all(T.adaptive_avg_pool1x1(Tensor(np.full((2, 3, 4, 4), 2.5))).data == 2.5)


def test_pool_empty_spatial():
    with pytest.raises(DimensionError):
        T.max_pool2x2(Tensor(np.ones((1, 1, 1, 1))))


def test_cross_entropy_examples():
    loss = T.softmax_cross_entropy(Tensor(np.zeros((3, 10))), np.array([0, 4, 9]))
    assert abs(loss.item() - np.log(10)) < 1e-12
    logits = np.zeros((1, 10))
    logits[0, 3] = 1000.0
    assert T.softmax_cross_entropy(Tensor(logits), np.array([3])).item() < 1e-12
    with pytest.raises(ValueError):
        T.softmax_cross_entropy(Tensor(np.zeros((1, 10))), np.array([10]))


def test_cross_entropy_gradient(rng):
    labels = np.array([1, 0, 2, 2])
    check_grad(lambda z: T.softmax_cross_entropy(z, labels), rng.normal(size=(4, 3)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(z):
    assert np.allclose(T.softmax(Tensor(z)).sum(axis=1), 1.0, atol=1e-12, rtol=0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(x * 2.0)


def test_backward_is_deterministic_and_fills_unreached(rng):
    a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    grads = []
    for _ in range(2):
        a.grad = None
        loss = ((a @ a).tanh() * a).sum()
        T.backward(loss, [a, unused])
        grads.append(a.grad.copy())
    assert np.array_equal(grads[0], grads[1])
    assert np.array_equal(unused.grad, np.zeros(2))


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    T.backward((y + y * x).sum())
    # d/dx (x^2 + x^3) = 2x + 3x^2
    assert x.grad.item() == pytest.approx(4 + 12)


def test_clamp_gradient_zero_outside():
    x = Tensor([-2.0, 0.5, 3.0], requires_grad=True)
    T.backward(x.clamp(0.0, 1.0).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])
