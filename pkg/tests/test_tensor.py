import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audioseg import tensor as T
from audioseg.errors import DimensionError, NumericError

F64 = np.float64


def t64(data, requires_grad=False):
    return T.Tensor(np.asarray(data, dtype=F64), requires_grad=requires_grad)


# ---- oracles -------------------------------------------------------------


def conv2d_naive(x, k):
    """Direct quintuple-loop same-padded cross-correlation."""
    c_in, h, w = x.shape
    c_out = k.shape[0]
    out = np.zeros((c_out, h, w), dtype=x.dtype)
    for co in range(c_out):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for ci in range(c_in):
                    for i in range(3):
                        for j in range(3):
                            yy, xj = y + i - 1, xx + j - 1
                            if 0 <= yy < h and 0 <= xj < w:
                                acc += k[co, ci, i, j] * x[ci, yy, xj]
                out[co, y, xx] = acc
    return out


def maxpool_naive(x):
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2), dtype=x.dtype)
    for ci in range(c):
        for y in range(h // 2):
            for xx in range(w // 2):
                out[ci, y, xx] = max(
                    x[ci, 2 * y, 2 * xx],
                    x[ci, 2 * y, 2 * xx + 1],
                    x[ci, 2 * y + 1, 2 * xx],
                    x[ci, 2 * y + 1, 2 * xx + 1],
                )
    return out


# ---- conv2d ---------------------------------------------------------------


def test_conv2d_zero_input():
    x = t64(np.zeros((1, 3, 3)))
    k = t64(np.random.default_rng(0).normal(size=(1, 1, 3, 3)))
    out = T.conv2d(x, k)
    assert out.shape == (1, 3, 3)
    assert np.all(out.data == 0)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(1)
    x = t64(rng.normal(size=(1, 5, 4)))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    out = T.conv2d(x, t64(k))
    np.testing.assert_allclose(out.data, x.data)


def test_conv2d_matches_naive_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 4, 4))
    k = rng.normal(size=(2, 1, 3, 3))
    out = T.conv2d(t64(x), t64(k))
    np.testing.assert_allclose(out.data, conv2d_naive(x, k), atol=1e-6)


def test_conv2d_matches_naive_oracle_many_shapes():
    rng = np.random.default_rng(3)
    for c_in, h, w, c_out in [(1, 3, 3, 1), (2, 5, 7, 3), (4, 8, 8, 2), (3, 4, 6, 4)]:
        x = rng.normal(size=(c_in, h, w))
        k = rng.normal(size=(c_out, c_in, 3, 3))
        out = T.conv2d(t64(x), t64(k))
        np.testing.assert_allclose(out.data, conv2d_naive(x, k), atol=1e-6)


def test_conv2d_batched_equals_per_sample():
    rng = np.random.default_rng(4)
    xs = rng.normal(size=(3, 2, 5, 5))
    k = rng.normal(size=(4, 2, 3, 3))
    batched = T.conv2d(t64(xs), t64(k))
    for b in range(3):
        single = T.conv2d(t64(xs[b]), t64(k))
        np.testing.assert_allclose(batched.data[b], single.data, atol=1e-12)


def test_conv2d_shape_errors():
    with pytest.raises(DimensionError):
        T.conv2d(t64(np.zeros((2, 4, 4))), t64(np.zeros((1, 3, 3, 3))))
    with pytest.raises(DimensionError):
        T.conv2d(t64(np.zeros((4, 4))), t64(np.zeros((1, 1, 3, 3))))
    with pytest.raises(DimensionError):
        T.conv2d(t64(np.zeros((1, 4, 4))), t64(np.zeros((1, 1, 5, 5))))


# ---- maxpool ----------------------------------------------------------------


def test_maxpool_constant_input():
    x = t64(np.full((2, 4, 4), 3.25))
    out = T.maxpool2x2(x)
    assert out.shape == (2, 2, 2)
    assert np.all(out.data == 3.25)


def test_maxpool_single_window():
    out = T.maxpool2x2(t64([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.data.reshape(()) == 4.0


def test_maxpool_matches_enumeration_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 6, 6))
    out = T.maxpool2x2(t64(x))
    np.testing.assert_allclose(out.data, maxpool_naive(x))


def test_maxpool_odd_sizes_floor():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 5, 7))
    out = T.maxpool2x2(t64(x))
    assert out.shape == (2, 2, 3)
    np.testing.assert_allclose(out.data, maxpool_naive(x))


def test_maxpool_tie_gradient_goes_to_first_row_major():
    x = t64(np.zeros((1, 2, 2)), requires_grad=True)
    out = T.maxpool2x2(x)
    out.backward(np.ones_like(out.data))
    expected = np.zeros((1, 2, 2))
    expected[0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_maxpool_too_small_errors():
    with pytest.raises(DimensionError):
        T.maxpool2x2(t64(np.zeros((1, 1, 5))))


# ---- dense -------------------------------------------------------------------


def test_dense_identity():
    x = t64([1.0, -2.0, 3.0])
    out = T.dense(x, t64(np.eye(3)), t64(np.zeros(3)))
    np.testing.assert_allclose(out.data, x.data)


def test_dense_zero_weights_gives_bias():
    b = t64([0.5, -0.5])
    out = T.dense(t64([1.0, 2.0, 3.0]), t64(np.zeros((2, 3))), b)
    np.testing.assert_allclose(out.data, b.data)


def test_dense_matches_explicit_dot_products():
    rng = np.random.default_rng(7)
    x = rng.normal(size=2)
    w = rng.normal(size=(3, 2))
    b = rng.normal(size=3)
    out = T.dense(t64(x), t64(w), t64(b))
    expected = np.array([w[i, 0] * x[0] + w[i, 1] * x[1] + b[i] for i in range(3)])
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_dense_shape_error():
    with pytest.raises(DimensionError):
        T.dense(t64([1.0, 2.0]), t64(np.zeros((3, 4))), t64(np.zeros(3)))


# ---- activations ------------------------------------------------------------


def test_softmax_uniform():
    for k in (2, 5, 9):
        out = T.softmax(t64(np.full(k, 1.7)))
        np.testing.assert_allclose(out.data, np.full(k, 1.0 / k), atol=1e-12)


def test_relu_values():
    out = T.relu(t64([-5.0, 5.0]))
    np.testing.assert_array_equal(out.data, [0.0, 5.0])


def test_softmax_analytic():
    out = T.softmax(t64([0.0, math.log(3.0)]))
    np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-12)


@given(st.lists(st.floats(-15, 15), min_size=2, max_size=8))
@settings(max_examples=200, deadline=None)
def test_softmax_sums_to_one_and_in_range(values):
    # logit gaps above ~36 saturate to exactly 0/1 in float64, so the open
    # interval is only observable for moderate inputs
    out = T.softmax(t64(values)).data
    assert abs(out.sum() - 1.0) <= 1e-6
    assert np.all(out > 0) and np.all(out < 1)


@given(st.lists(st.floats(-20, 20), min_size=2, max_size=8), st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_softmax_permutation_equivariant(values, rnd):
    perm = list(range(len(values)))
    rnd.shuffle(perm)
    direct = T.softmax(t64([values[p] for p in perm])).data
    permuted = T.softmax(t64(values)).data[perm]
    np.testing.assert_allclose(direct, permuted, atol=1e-12)


def test_sigmoid_range_and_values():
    out = T.sigmoid(t64([-800.0, 0.0, 800.0]))
    assert np.all(out.data >= 0) and np.all(out.data <= 1)
    assert out.data[1] == 0.5


# ---- cross entropy -------------------------------------------------------------


def test_cross_entropy_certain_prediction_is_zero():
    probs = t64([0.0, 1.0, 0.0])
    assert T.cross_entropy(probs, 1).item() == 0.0


def test_cross_entropy_uniform_is_log_k():
    probs = t64(np.full(4, 0.25))
    assert abs(T.cross_entropy(probs, 2).item() - math.log(4)) < 1e-12


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DimensionError):
        T.cross_entropy(t64([0.5, 0.5]), 2)


def test_softmax_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    logits = T.Tensor(rng.normal(size=6).astype(F64), requires_grad=True)

    def fn(z):
        return T.cross_entropy(T.softmax(z), 3)

    assert T.grad_check(fn, [logits], h=1e-6) < 1e-8


def test_softmax_cross_entropy_fused_is_stable_for_extreme_logits():
    logits = T.Tensor(np.array([1000.0, 0.0, -1000.0]), requires_grad=True, dtype=F64)
    loss = T.cross_entropy(T.softmax(logits), 0)
    assert loss.item() == pytest.approx(0.0, abs=1e-12)
    loss2 = T.cross_entropy(T.softmax(logits), 2)
    assert loss2.item() == pytest.approx(2000.0, rel=1e-12)
    loss2.backward()
    assert np.all(np.isfinite(logits.grad))


# ---- LSTM -----------------------------------------------------------------


def lstm_zero_params(d, u, dtype=F64):
    return T.LSTMParams(
        wx=T.Tensor(np.zeros((4 * u, d), dtype=dtype), requires_grad=True),
        wh=T.Tensor(np.zeros((4 * u, u), dtype=dtype), requires_grad=True),
        b=T.Tensor(np.zeros(4 * u, dtype=dtype), requires_grad=True),
    )


def test_lstm_zero_params_zero_state_gives_zero_h():
    params = lstm_zero_params(3, 4)
    h, c = T.lstm_step(t64([1.0, -1.0, 2.0]), t64(np.zeros(4)), t64(np.zeros(4)), params)
    np.testing.assert_allclose(h.data, np.zeros(4), atol=1e-12)
    np.testing.assert_allclose(c.data, np.zeros(4), atol=1e-12)


def test_lstm_saturated_forget_gate_preserves_cell():
    u = 3
    params = lstm_zero_params(2, u)
    params.b.data[u : 2 * u] = 100.0  # forget gate saturates to 1
    c_prev = np.array([0.3, -0.7, 1.5])
    h, c = T.lstm_step(t64([0.0, 0.0]), t64(np.zeros(u)), t64(c_prev), params)
    np.testing.assert_allclose(c.data, c_prev, atol=1e-9)


def test_lstm_backward_matches_finite_differences():
    rng = np.random.default_rng(9)
    d, u = 3, 4
    params = T.LSTMParams(
        wx=T.Tensor(rng.normal(size=(4 * u, d)).astype(F64), requires_grad=True),
        wh=T.Tensor(rng.normal(size=(4 * u, u)).astype(F64), requires_grad=True),
        b=T.Tensor(rng.normal(size=4 * u).astype(F64), requires_grad=True),
    )
    x = T.Tensor(rng.normal(size=d).astype(F64), requires_grad=True)
    h0 = T.Tensor(rng.normal(size=u).astype(F64), requires_grad=True)
    c0 = T.Tensor(rng.normal(size=u).astype(F64), requires_grad=True)

    def fn(xt, h, c, wx, wh, b):
        ht, ct = T.lstm_step(xt, h, c, T.LSTMParams(wx=wx, wh=wh, b=b))
        return (T.tsum(ht * ht) + T.tsum(ct)) * 0.5

    err = T.grad_check(fn, [x, h0, c0, params.wx, params.wh, params.b], h=1e-6)
    assert err < 1e-5


def test_lstm_shape_errors():
    params = lstm_zero_params(3, 4)
    with pytest.raises(DimensionError):
        T.lstm_step(t64([1.0, 2.0]), t64(np.zeros(4)), t64(np.zeros(4)), params)
    with pytest.raises(DimensionError):
        T.lstm_step(t64([1.0, 2.0, 3.0]), t64(np.zeros(5)), t64(np.zeros(4)), params)


# ---- Adam -------------------------------------------------------------------


def test_adam_zero_gradient_keeps_params():
    p = T.Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=F64)
    state = T.AdamState.for_params([p], lr=0.1)
    T.adam_update([p], [np.zeros(2)], state)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert state.step_count == 1


def test_adam_first_step_closed_form():
    for g in (0.37, -4.2, 1e-3):
        p = T.Tensor(np.array([2.0]), requires_grad=True, dtype=F64)
        state = T.AdamState.for_params([p], lr=0.05)
        T.adam_update([p], [np.array([g])], state)
        expected = 2.0 - 0.05 * g / (abs(g) + state.eps)
        assert p.data[0] == pytest.approx(expected, abs=1e-15)


def test_adam_three_steps_match_hand_reference():
    # reference: minimize f(x) = x^2 from x = 1 with lr 0.1, grad 2x
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    x_ref, m, v = 1.0, 0.0, 0.0
    trace = []
    for t in range(1, 4):
        g = 2.0 * x_ref
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x_ref -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        trace.append(x_ref)

    p = T.Tensor(np.array([1.0]), requires_grad=True, dtype=F64)
    state = T.AdamState.for_params([p], lr=lr)
    got = []
    for _ in range(3):
        T.adam_update([p], [2.0 * p.data], state)
        got.append(float(p.data[0]))
    np.testing.assert_allclose(got, trace, atol=1e-14)


def test_adam_sign_consistent_on_first_step():
    rng = np.random.default_rng(10)
    g = rng.normal(size=32)
    p = T.Tensor(np.zeros(32), requires_grad=True, dtype=F64)
    state = T.AdamState.for_params([p], lr=0.01)
    T.adam_update([p], [g], state)
    mask = np.abs(g) > state.eps
    assert np.all(np.sign(p.data[mask]) == -np.sign(g[mask]))


def test_adam_rejects_non_finite_gradient_without_touching_params():
    p = T.Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=F64)
    state = T.AdamState.for_params([p], lr=0.1)
    with pytest.raises(NumericError):
        T.adam_update([p], [np.array([1.0, np.nan])], state)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    assert state.step_count == 0


# ---- grad_check harness ------------------------------------------------------


def test_grad_check_sum_of_squares():
    x = T.Tensor(np.array([0.5, -1.5, 2.0, 0.0]), requires_grad=True, dtype=F64)
    err = T.grad_check(lambda t: T.tsum(t * t), [x], h=1e-6)
    assert err < 1e-8


def test_grad_check_composite_ops():
    rng = np.random.default_rng(11)
    x = T.Tensor(rng.normal(size=(3, 4)).astype(F64) + 0.1, requires_grad=True)

    def fn(t):
        return T.tmean(T.sigmoid(t) * T.tanh(t) + T.relu(t) * 0.3)

    assert T.grad_check(fn, [x], h=1e-6) < 1e-5


def test_conv_pool_dense_chain_gradients():
    rng = np.random.default_rng(12)
    x = T.Tensor(rng.normal(size=(2, 6, 6)).astype(F64), requires_grad=True)
    k = T.Tensor(rng.normal(size=(3, 2, 3, 3)).astype(F64) * 0.4, requires_grad=True)
    w = T.Tensor(rng.normal(size=(2, 27)).astype(F64) * 0.3, requires_grad=True)
    b = T.Tensor(rng.normal(size=2).astype(F64), requires_grad=True)

    def fn(xi, ki, wi, bi):
        y = T.maxpool2x2(T.relu(T.conv2d(xi, ki)))
        return T.cross_entropy(T.softmax(T.dense(T.flatten(y), wi, bi)), 1)

    assert T.grad_check(fn, [x, k, w, b], h=1e-6) < 1e-5


# ---- misc invariants -------------------------------------------------------


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True, dtype=F64)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_backward_rejects_non_finite_root():
    x = T.Tensor(np.array([1.0]), requires_grad=True, dtype=F64)
    bad = T.log(x * 0.0)  # -inf
    with pytest.raises(NumericError):
        bad.backward()


def test_gradient_accumulates_across_shared_use():
    x = T.Tensor(np.array([3.0]), requires_grad=True, dtype=F64)
    y = T.tsum(x * x) + T.tsum(x * 2.0)
    y.backward()
    assert x.grad[0] == pytest.approx(2 * 3.0 + 2.0)


def test_no_grad_blocks_graph_construction():
    x = T.Tensor(np.array([1.0]), requires_grad=True, dtype=F64)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y._parents == ()


def test_clip_passes_gradient_inside_range_only():
    x = T.Tensor(np.array([-2.0, 0.5, 2.0]), requires_grad=True, dtype=F64)
    out = T.tsum(T.clip(x, 0.0, 1.0))
    out.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])
