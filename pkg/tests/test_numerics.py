import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dpfield.errors import ContractError, NumericError, ShapeError
from dpfield.numerics import (
    AdamState,
    ParameterStore,
    Tensor,
    adam_update,
    add,
    assert_finite,
    backward_gradients,
    broadcast_to,
    clip_grad_norm,
    concat,
    exp,
    finite_difference_check,
    gelu,
    global_grad_norm,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    relative_error,
    softmax,
    square,
    sum_,
    take,
)
from dpfield.numerics.tensor import div, swapaxes, tanh


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# --- forward values -----------------------------------------------------------

def test_matmul_identity_and_hand_example():
    a = t64([[1, 2], [3, 4]])
    assert np.array_equal(matmul(t64(np.eye(2)), a).data, a.data)
    out = matmul(a, t64([[5, 6], [7, 8]]))
    assert np.array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_dimension_error():
    with pytest.raises(ShapeError):
        matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))


def test_softmax_examples():
    assert np.allclose(softmax(t64([2.0, 2.0, 2.0])).data, [1 / 3] * 3)
    assert np.allclose(softmax(t64([0.0, math.log(3)])).data, [0.25, 0.75])
    big = softmax(t64([1000.0, 0.0])).data
    assert np.all(np.isfinite(big))
    assert big[0] == pytest.approx(1.0) and big[1] == pytest.approx(0.0, abs=1e-300)


def test_layer_norm_examples():
    one, zero = t64([1.0, 1.0]), t64([0.0, 0.0])
    assert np.array_equal(layer_norm(t64([[4.0, 4.0]]), one, zero).data, [[0.0, 0.0]])
    assert np.allclose(layer_norm(t64([[1.0, 3.0]]), one, zero, eps=1e-12).data, [[-1.0, 1.0]])
    assert np.allclose(layer_norm(t64([[1.0, 3.0]]), t64([2.0, 2.0]), t64([1.0, 1.0]), eps=1e-12).data, [[-1.0, 3.0]])


def test_layer_norm_rejects_wrong_gain():
    with pytest.raises(ShapeError):
        layer_norm(t64(np.ones((2, 3))), t64(np.ones(2)), t64(np.zeros(2)))


def test_gelu_examples():
    assert gelu(t64([0.0])).data[0] == 0.0
    assert gelu(t64([20.0])).data[0] == pytest.approx(20.0)
    # scalar reference of the tanh form
    ref = 0.5 * (1 + math.tanh(math.sqrt(2 / math.pi) * (1 + 0.044715)))
    assert gelu(t64([1.0])).data[0] == pytest.approx(ref, rel=1e-14)
    # the tanh form stays close to the exact erf form
    assert gelu(t64([1.0])).data[0] == pytest.approx(0.5 * (1 + math.erf(1 / math.sqrt(2))), abs=1e-3)


def test_dtype_rules():
    assert Tensor([1, 2]).data.dtype == np.float32
    assert Tensor(np.ones(2, dtype=np.float64)).data.dtype == np.float64
    assert mul(t64([1.0]), 2.0).data.dtype == np.float64


# --- gradients ---------------------------------------------------------------

def test_square_grad():
    x = t64(3.0)
    square(x).backward()
    assert x.grad == 6.0


def test_backward_requires_scalar():
    x = t64([1.0, 2.0])
    with pytest.raises(ContractError):
        mul(x, 2.0).backward()


def test_unused_parameter_gets_exact_zero():
    store = ParameterStore()
    store.add("a", np.ones(3))
    store.add("unused", np.ones(2))
    backward_gradients(sum_(square(store["a"])), store)
    assert np.array_equal(store["unused"].grad, np.zeros(2))
    assert np.array_equal(store["a"].grad, 2 * np.ones(3))


def _check(fn, shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for i, s in enumerate(shapes):
        store.add(f"p{i}", rng.standard_normal(s))
    report = finite_difference_check(lambda p: fn(*[p[f"p{i}"] for i in range(len(shapes))]), store)
    assert report.max_error < tol, list(report.lines())


def test_sum_of_product_matches_finite_differences():
    _check(lambda a, b: sum_(mul(a, b)), [(3, 4), (3, 4)], tol=1e-4)


@pytest.mark.parametrize(
    "fn, shapes",
    [
        (lambda a, b: sum_(square(matmul(a, b))), [(2, 3, 4), (4, 5)]),
        (lambda a, b: sum_(square(matmul(a, b))), [(2, 3, 4), (2, 4, 5)]),
        (lambda a, b: sum_(square(add(a, b))), [(3, 4), (4,)]),
        (lambda a, b: sum_(square(div(a, add(square(b), 1.0)))), [(3, 4), (3, 1)]),
        (lambda a: sum_(mul(softmax(a, axis=-1), t64(np.arange(12.0).reshape(3, 4), False))), [(3, 4)]),
        (lambda a, g, b: sum_(square(layer_norm(a, g, b))), [(3, 5), (5,), (5,)]),
        (lambda a: sum_(square(gelu(a))), [(4, 3)]),
        (lambda a: sum_(tanh(a)), [(4,)]),
        (lambda a: mean(exp(a)), [(2, 3)]),
        (lambda a, w, b: sum_(square(linear(a, w, b))), [(2, 3, 4), (4, 2), (2,)]),
        (lambda a: sum_(square(swapaxes(a, 1, 2))), [(2, 3, 4)]),
        (lambda a: sum_(square(broadcast_to(a, (3, 2, 4)))), [(2, 1)]),
        (lambda a, b: sum_(square(concat([a, b], axis=1))), [(2, 3), (2, 1)]),
        (lambda a: sum_(square(take(a, np.array([0, 2, 2]), axis=1))), [(2, 3)]),
        (lambda a: sum_(square(mean(a, axis=1, keepdims=True))), [(2, 3)]),
    ],
)
def test_op_gradients(fn, shapes):
    _check(fn, shapes)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
    arrays(np.float64, (4,), elements=st.floats(-3, 3)),
)
def test_broadcast_gradient_property(a, b):
    # d/db sum(a * b) is the column sum of a, whatever the broadcast
    ta, tb = t64(a), t64(b)
    sum_(mul(ta, tb)).backward()
    assert np.allclose(tb.grad, a.sum(axis=0))
    assert np.allclose(ta.grad, np.broadcast_to(b, a.shape))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (2, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    p = softmax(t64(x)).data
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=-1), 1.0)


def test_no_grad_records_nothing():
    x = t64([1.0, 2.0])
    with no_grad():
        y = mul(x, 3.0)
    assert not y.requires_grad


def test_assert_finite():
    assert_finite(np.ones(3))
    with pytest.raises(NumericError):
        assert_finite(np.array([1.0, np.nan]))


# --- gradient checker --------------------------------------------------------

def test_gradcheck_quadratic_is_exact():
    store = ParameterStore()
    store.add("x", np.array([0.3, -1.2, 2.0]))
    rep = finite_difference_check(lambda p: sum_(mul(square(p["x"]), 1.5)), store, abs_floor=0.0)
    assert rep.max_error < 1e-8


def test_gradcheck_constant_function():
    store = ParameterStore()
    store.add("x", np.ones(3))
    rep = finite_difference_check(lambda p: sum_(mul(p["x"], 0.0)), store)
    assert rep.max_error == 0.0


def test_relative_error_definition():
    assert relative_error(np.zeros(2), np.zeros(2)) == 0.0
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)


# --- optimizer ---------------------------------------------------------------

def _store(values):
    s = ParameterStore()
    s.add("w", np.asarray(values, dtype=np.float64))
    return s


def test_adam_first_step_is_lr_times_sign():
    store = _store([1.0, -1.0, 0.5])
    store["w"].grad = np.array([0.3, -2.0, 5.0])
    state = AdamState.for_params(store, lr=0.01)
    adam_update(store, state)
    assert np.allclose(store["w"].data, [1.0 - 0.01, -1.0 + 0.01, 0.5 - 0.01], atol=1e-8)


def test_adam_zero_grad_leaves_params():
    store = _store([1.0, 2.0])
    store["w"].grad = np.zeros(2)
    adam_update(store, AdamState.for_params(store, lr=0.1))
    assert np.array_equal(store["w"].data, [1.0, 2.0])


def test_adam_matches_reference_over_steps():
    rng = np.random.default_rng(1)
    grads = rng.standard_normal((5, 3))
    store = _store([0.1, 0.2, 0.3])
    state = AdamState.for_params(store, lr=0.05)
    w, m, v = np.array([0.1, 0.2, 0.3]), np.zeros(3), np.zeros(3)
    for k, g in enumerate(grads, start=1):
        store["w"].grad = g.copy()
        adam_update(store, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.05 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    assert np.allclose(store["w"].data, w, rtol=1e-12)


def test_weight_average_follows_parameters():
    store = _store([0.0, 0.0])
    state = AdamState.for_params(store, lr=0.1, ema_decay=0.5)
    seen = []
    for _ in range(3):
        store["w"].grad = np.array([1.0, -1.0])
        adam_update(store, state)
        seen.append(store["w"].data.copy())
    expected = seen[0]
    for w in seen[1:]:
        expected = 0.5 * expected + 0.5 * w
    assert np.allclose(state.ema["w"], expected, rtol=1e-12)
    plain = AdamState.for_params(store, lr=0.1)
    store["w"].grad = np.ones(2)
    adam_update(store, plain)
    assert plain.ema == {}


def test_adam_is_deterministic():
    def run():
        store = _store(np.linspace(-1, 1, 4))
        state = AdamState.for_params(store, lr=0.1)
        for k in range(3):
            store["w"].grad = np.sin(store["w"].data + k)
            adam_update(store, state)
        return store["w"].data.tobytes()

    assert run() == run()


def test_adam_without_gradient_raises():
    store = _store([1.0])
    with pytest.raises(ContractError):
        adam_update(store, AdamState.for_params(store))


def test_clip_grad_norm():
    store = ParameterStore()
    store.add("a", np.zeros(2))
    store.add("b", np.zeros(1))
    store["a"].grad = np.array([3.0, 0.0])
    store["b"].grad = np.array([4.0])
    assert global_grad_norm(store) == pytest.approx(5.0)
    clip_grad_norm(store, 1.0)
    assert global_grad_norm(store) == pytest.approx(1.0)
    assert np.allclose(store["a"].grad, [0.6, 0.0])


def test_parameter_store_rejects_duplicates():
    store = _store([1.0])
    with pytest.raises(ContractError):
        store.add("w", np.ones(1))
