"""Engine-level tests: value oracles, gradient checks, tape semantics."""

import math

import numpy as np
import pytest

from latentlink import tensor as T
from fdcheck import numeric_gradient, assert_grad_close


def f64(data, requires_grad=False):
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


# -- value oracles -----------------------------------------------------------


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    eye = T.Tensor(np.eye(3))
    out = T.matmul(eye, T.Tensor(a, dtype=np.float64))
    np.testing.assert_allclose(out.numpy(), a, rtol=0, atol=0)


def test_matmul_hand_value():
    a = f64([[1.0, 2.0], [3.0, 4.0]])
    b = f64([[0.0], [1.0]])
    np.testing.assert_array_equal(T.matmul(a, b).numpy(), [[2.0], [4.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(f64(np.zeros((2, 3))), f64(np.zeros((2, 3))))


def test_gelu_fixed_points():
    x = f64([0.0, 1.0, 10.0])
    y = T.gelu(x).numpy()
    assert y[0] == 0.0
    # 1 * Phi(1) from the standard normal CDF
    assert abs(y[1] - 0.841345) < 1e-5
    # asymptotic identity gelu(x)/x -> 1
    assert abs(y[2] / 10.0 - 1.0) < 1e-6


def test_gelu_odd_region_negative():
    x = f64([-10.0])
    assert abs(T.gelu(x).numpy()[0]) < 1e-6


def test_softmax_cross_entropy_uniform():
    logits = f64(np.zeros((8, 4)))
    targets = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    loss = T.softmax_cross_entropy(logits, targets)
    assert abs(loss.item() - 8 * math.log(4)) < 1e-5
    assert abs(loss.item() - 11.090355) < 1e-5


def test_softmax_cross_entropy_saturated():
    logits = np.zeros((4, 5))
    targets = np.array([1, 2, 3, 4])
    logits[np.arange(4), targets] = 1e4
    loss = T.softmax_cross_entropy(f64(logits), targets)
    assert loss.item() < 1e-8


def test_softmax_cross_entropy_empty_mask():
    logits = f64(np.random.default_rng(1).normal(size=(5, 7)))
    loss = T.softmax_cross_entropy(logits, np.zeros(5, dtype=int), mask=np.zeros(5, dtype=bool))
    assert loss.item() == 0.0


def test_softmax_cross_entropy_target_out_of_vocab():
    logits = f64(np.zeros((3, 4)))
    with pytest.raises(IndexError):
        T.softmax_cross_entropy(logits, np.array([0, 4, 1]))


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    x = f64(rng.normal(scale=5.0, size=(10, 32)))
    y = T.softmax(x, axis=-1).numpy()
    np.testing.assert_allclose(y.sum(axis=-1), np.ones(10), atol=1e-9)


def test_rmsnorm_zero_input():
    x = f64(np.zeros((4, 8)))
    gain = f64(np.ones(8))
    y = T.rmsnorm(x, gain, eps=1e-6).numpy()
    np.testing.assert_array_equal(y, np.zeros((4, 8)))


def test_rmsnorm_hand_value():
    x = f64([[3.0, 4.0]])
    gain = f64(np.ones(2))
    y = T.rmsnorm(x, gain, eps=1e-14).numpy()[0]
    np.testing.assert_allclose(y, [0.848528, 1.131371], atol=1e-5)


def test_rmsnorm_scale_invariance():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 16))
    gain = f64(rng.normal(size=16))
    eps = 1e-30
    base = T.rmsnorm(f64(x), gain, eps).numpy()
    scaled = T.rmsnorm(f64(37.5 * x), gain, eps).numpy()
    np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-12)


def test_rmsnorm_requires_positive_eps():
    with pytest.raises(T.ContractError):
        T.rmsnorm(f64(np.ones((2, 2))), f64(np.ones(2)), eps=0.0)


# -- backward semantics ------------------------------------------------------


def test_backward_sum_gives_ones():
    x = f64(np.random.default_rng(0).normal(size=(3, 5)), requires_grad=True)
    with T.tape():
        loss = T.tsum(x)
        T.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((3, 5)))


def test_backward_requires_scalar():
    x = f64(np.ones((2, 2)), requires_grad=True)
    with T.tape():
        y = x * 2.0
        with pytest.raises(T.ContractError):
            T.backward(y)


def test_frozen_tensor_gets_no_grad():
    frozen = f64(np.ones((4, 4)), requires_grad=False)
    live = f64(np.ones((4, 4)), requires_grad=True)
    before = frozen.numpy().copy()
    with T.tape():
        loss = T.tsum(T.matmul(frozen, live))
        T.backward(loss)
    assert frozen.grad is None
    assert live.grad is not None
    np.testing.assert_array_equal(frozen.numpy(), before)


def test_fanout_accumulates_additively():
    x = f64([2.0], requires_grad=True)
    with T.tape():
        y = x * 3.0
        loss = T.tsum(y + y)
        T.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0])


def test_no_grad_suppresses_recording():
    x = f64(np.ones(3), requires_grad=True)
    with T.tape() as tp:
        with T.no_grad():
            y = x * 2.0
        assert len(tp) == 0
        assert not y.requires_grad


def test_determinism_bitwise():
    def run():
        rng = np.random.default_rng(42)
        x = T.Tensor(rng.normal(size=(6, 6)).astype(np.float32), requires_grad=True)
        w = T.Tensor(rng.normal(size=(6, 6)).astype(np.float32), requires_grad=True)
        with T.tape():
            y = T.gelu(T.matmul(x, w))
            loss = T.tsum(T.rmsnorm(y, T.Tensor(np.ones(6, dtype=np.float32)), 1e-5))
            T.backward(loss)
        return loss.item(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


def test_checked_mode_rejects_non_finite():
    T.set_checked(True)
    try:
        with pytest.raises(T.ContractError):
            T.Tensor(np.array([1.0, np.inf]))
    finally:
        T.set_checked(False)


# -- finite-difference gradient checks ---------------------------------------


def scalar_loss_through(op_builder, arrays, wrt_index):
    """Build loss(arrays) where arrays[wrt_index] is replaced by x."""

    def fn(x):
        args = [np.asarray(a, dtype=np.float64) for a in arrays]
        args[wrt_index] = x
        return op_builder([T.Tensor(a, dtype=np.float64) for a in args]).item()

    return fn


def analytic_grad(op_builder, arrays, wrt_index):
    tensors = [f64(a, requires_grad=(i == wrt_index)) for i, a in enumerate(arrays)]
    with T.tape():
        loss = op_builder(tensors)
        T.backward(loss)
    return tensors[wrt_index].grad


CASES = []


def case(fn):
    CASES.append(fn)
    return fn


@case
def _matmul_sum(ts):
    return T.tsum(T.matmul(ts[0], ts[1]))


@case
def _gelu_sum(ts):
    return T.tsum(T.gelu(ts[0]) * ts[1])


@case
def _softmax_weighted(ts):
    return T.tsum(T.softmax(ts[0], axis=-1) * ts[1])


@case
def _rmsnorm_sum(ts):
    gain = T.reshape(T.narrow(ts[1], 0, 0, 1), (ts[1].shape[1],))
    return T.tsum(T.rmsnorm(ts[0], gain, 1e-5) * ts[1])


@case
def _mixed_graph(ts):
    h = T.gelu(T.matmul(ts[0], ts[1]))
    return T.tmean(h * h)


@pytest.mark.parametrize("builder", CASES)
@pytest.mark.parametrize("wrt", [0, 1])
def test_gradcheck_ops(builder, wrt):
    rng = np.random.default_rng(11)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(6, 6)) if builder is _matmul_sum or builder is _mixed_graph else rng.normal(size=(4, 6))
    arrays = [a, b]
    numeric = numeric_gradient(scalar_loss_through(builder, arrays, wrt), arrays[wrt])
    analytic = analytic_grad(builder, arrays, wrt)
    assert_grad_close(analytic, numeric)


def test_gradcheck_cross_entropy_logits():
    rng = np.random.default_rng(5)
    logits = rng.normal(size=(6, 9))
    targets = rng.integers(0, 9, size=6)
    mask = np.array([True, True, False, True, False, True])

    def build(ts):
        return T.softmax_cross_entropy(ts[0], targets, mask)

    numeric = numeric_gradient(scalar_loss_through(build, [logits], 0), logits)
    analytic = analytic_grad(build, [logits], 0)
    assert_grad_close(analytic, numeric)


def test_gradcheck_two_layer_mlp():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(5, 8))
    w1 = rng.normal(size=(8, 16)) * 0.5
    w2 = rng.normal(size=(16, 3)) * 0.5
    targets = rng.integers(0, 3, size=5)

    def build(ts):
        h = T.gelu(T.matmul(ts[0], ts[1]))
        logits = T.matmul(h, ts[2])
        return T.softmax_cross_entropy(logits, targets)

    for wrt in (1, 2):
        numeric = numeric_gradient(scalar_loss_through(build, [x, w1, w2], wrt), [x, w1, w2][wrt])
        analytic = analytic_grad(build, [x, w1, w2], wrt)
        assert_grad_close(analytic, numeric)


def test_gradcheck_shape_ops():
    rng = np.random.default_rng(17)
    a = rng.normal(size=(4, 8))
    b = rng.normal(size=(2, 8))

    def build(ts):
        stacked = T.concat([ts[0], ts[1]], axis=0)
        head = T.narrow(stacked, 0, 1, 4)
        folded = T.reshape(head, (2, 2, 8))
        return T.tsum(T.swapaxes(folded, 0, 1) * 1.5)

    for wrt in (0, 1):
        numeric = numeric_gradient(scalar_loss_through(build, [a, b], wrt), [a, b][wrt])
        analytic = analytic_grad(build, [a, b], wrt)
        assert_grad_close(analytic, numeric)


def test_gradcheck_take_rows():
    rng = np.random.default_rng(19)
    table = rng.normal(size=(7, 5))
    ids = np.array([3, 0, 3, 6])

    def build(ts):
        return T.tsum(T.take_rows(ts[0], ids) * 2.0)

    numeric = numeric_gradient(scalar_loss_through(build, [table], 0), table)
    analytic = analytic_grad(build, [table], 0)
    assert_grad_close(analytic, numeric)


def test_gradcheck_batched_matmul():
    rng = np.random.default_rng(23)
    a = rng.normal(size=(3, 4, 5))
    b = rng.normal(size=(3, 5, 2))

    def build(ts):
        return T.tsum(T.matmul(ts[0], ts[1]))

    for wrt in (0, 1):
        numeric = numeric_gradient(scalar_loss_through(build, [a, b], wrt), [a, b][wrt])
        analytic = analytic_grad(build, [a, b], wrt)
        assert_grad_close(analytic, numeric)
