import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from filmsarc.autograd import Adam, OptimizerState, ParamGroup, Tensor, adam_step, backward, clip_global_norm, debug_mode, no_grad, ops
from filmsarc.errors import ConfigError, ContractError, DimensionError, MaskError, NumericalError, ShapeError, StateError

from oracles import assert_grad_close, conv2d_loop, layer_norm_loop, numeric_grad


def leaf(a):
    return Tensor(np.array(a, dtype=float), requires_grad=True)


def check_grads(build, *arrays, rtol=1e-4, atol=1e-7):
    """Compare backward() of sum(build(...) * probe) against central differences."""
    tensors = [leaf(a) for a in arrays]
    out = build(*tensors)
    probe = np.random.default_rng(99).normal(size=out.shape)
    backward(ops.sum(ops.mul(out, probe)))
    for t in tensors:
        def f():
            with no_grad():
                return float(np.sum(build(*[Tensor(x.data) for x in tensors]).data * probe))
        assert_grad_close(t.grad, numeric_grad(f, t.data), rtol, atol)


# -- matmul -------------------------------------------------------------------

def test_matmul_identity():
    a = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ops.matmul(np.eye(2), a).data, a)


def test_matmul_hand_case():
    out = ops.matmul([[1, 2], [3, 4]], [[5], [6]])
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        ops.matmul(np.ones((2, 3)), np.ones((2, 2)))


def test_matmul_sum_gradient_matches_fd():
    rng = np.random.default_rng(0)
    check_grads(lambda a, b: ops.matmul(a, b), rng.normal(size=(3, 4)), rng.normal(size=(4, 2)))


def test_matmul_batched_and_vector_grads():
    rng = np.random.default_rng(1)
    check_grads(lambda a, b: ops.matmul(a, b), rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)))
    check_grads(lambda a, b: ops.matmul(a, b), rng.normal(size=4), rng.normal(size=(4, 3)))


# -- conv2d -------------------------------------------------------------------

def test_conv_identity_1x1():
    x = np.random.default_rng(0).normal(size=(1, 3, 5, 5))
    assert np.array_equal(ops.conv2d(x, np.eye(3).reshape(3, 3, 1, 1)).data, x)


def test_conv_zero_kernel():
    x = np.random.default_rng(0).normal(size=(2, 2, 6, 6))
    out = ops.conv2d(x, np.zeros((4, 2, 3, 3)), padding=1)
    assert out.shape == (2, 4, 6, 6) and not out.data.any()


def test_conv_matches_loop_reference_spec_case():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 1, 4, 4))
    w = rng.normal(size=(2, 1, 3, 3))
    assert np.max(np.abs(ops.conv2d(x, w).data - conv2d_loop(x, w))) < 1e-12


@pytest.mark.parametrize("case", range(25))
def test_conv_random_against_loop_and_fd(case):
    rng = np.random.default_rng(100 + case)
    b, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    h, w = rng.integers(k, 7, size=2)
    x = rng.normal(size=(b, c, h, w))
    kern = rng.normal(size=(o, c, k, k))
    bias = rng.normal(size=o)
    got = ops.conv2d(x, kern, bias, stride=stride, padding=pad).data
    assert np.max(np.abs(got - conv2d_loop(x, kern, bias, stride, pad))) < 1e-12
    check_grads(lambda a, kk, bb: ops.conv2d(a, kk, bb, stride=stride, padding=pad), x, kern, bias)


def test_conv_unbatched_input():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    assert np.allclose(ops.conv2d(x, w, padding=1).data, conv2d_loop(x[None], w, padding=1)[0], atol=1e-12)


def test_conv_underflow_is_config_error():
    with pytest.raises(ConfigError):
        ops.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)))


# -- elementwise --------------------------------------------------------------

def test_elementwise_zero_cases():
    assert ops.elementwise("tanh", 0.0).item() == 0.0
    assert ops.elementwise("sigmoid", 0.0).item() == 0.5


def test_scale_shift_hand_cases():
    f = np.full((1, 2, 2), 3.0)
    assert np.all(ops.elementwise("scale_shift", f, np.ones(1), np.zeros(1)).data == 3.0)
    assert np.all(ops.elementwise("scale_shift", f, np.full(1, 2.0), np.ones(1)).data == 7.0)


def test_elementwise_rejects_unsupported_broadcast():
    with pytest.raises(ShapeError):
        ops.elementwise("add", np.ones((2, 3)), np.ones((2, 1)))
    with pytest.raises(DimensionError):
        ops.elementwise("scale_shift", np.ones((3, 2, 2)), np.ones(2), np.ones(2))
    assert ops.elementwise("add", np.ones((2, 3)), np.ones(3)).shape == (2, 3)


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "relu", "gelu"])
def test_unary_gradients(kind):
    x = np.random.default_rng(5).normal(size=(3, 4))
    x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
    check_grads(lambda a: ops.elementwise(kind, a), x)


@pytest.mark.parametrize("kind", ["add", "mul"])
def test_binary_gradients(kind):
    rng = np.random.default_rng(6)
    check_grads(lambda a, b: ops.elementwise(kind, a, b), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    check_grads(lambda a, b: ops.elementwise(kind, a, b), rng.normal(size=(2, 3, 4)), rng.normal(size=4))


def test_scale_shift_gradient():
    rng = np.random.default_rng(7)
    check_grads(ops.scale_shift, rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))


# -- maxpool ------------------------------------------------------------------

def test_maxpool_hand_cases():
    c = np.array([[1.0, 5.0], [3.0, 2.0]])
    assert ops.maxpool_cols(c).data.tolist() == [3.0, 5.0]
    assert ops.maxpool_cols(c, [False, True]).data.tolist() == [1.0, 5.0]
    same = np.array([[1.0, -2.0, 4.0]] * 3)
    assert ops.maxpool_cols(same).data.tolist() == [1.0, -2.0, 4.0]


def test_maxpool_all_masked():
    with pytest.raises(MaskError):
        ops.maxpool_cols(np.ones((2, 2)), [True, True])


def test_maxpool_tie_routes_to_first_row():
    c = leaf([[2.0, 1.0], [2.0, 0.0]])
    backward(ops.sum(ops.maxpool_cols(c)))
    assert c.grad.tolist() == [[1.0, 1.0], [0.0, 0.0]]


def test_maxpool_gradient():
    rng = np.random.default_rng(8)
    mask = np.array([[False, True, False, False], [True, False, False, True]])
    check_grads(lambda c: ops.maxpool_cols(c, mask), rng.normal(size=(2, 4, 3)))


# -- layer norm / instance norm ----------------------------------------------

def test_layer_norm_zero_variance_and_zero_gain():
    x = np.full(6, 2.5)
    assert np.all(ops.layer_norm(x, np.ones(6), np.zeros(6)).data == 0.0)
    bias = np.arange(6.0)
    assert np.array_equal(ops.layer_norm(np.random.default_rng(0).normal(size=6), np.zeros(6), bias).data, bias)


@pytest.mark.parametrize("case", range(25))
def test_layer_norm_against_loop(case):
    rng = np.random.default_rng(200 + case)
    x = rng.normal(size=(rng.integers(1, 4), 8)) * rng.uniform(0.1, 10)
    gain, bias = rng.normal(size=8), rng.normal(size=8)
    assert np.max(np.abs(ops.layer_norm(x, gain, bias).data - layer_norm_loop(x, gain, bias))) < 1e-12
    check_grads(ops.layer_norm, x, gain, bias)


def test_instance_norm_gradient_and_stats():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, 3, 4, 4)) * 3 + 1
    y = ops.instance_norm(x).data
    assert np.allclose(y.mean(axis=(-2, -1)), 0, atol=1e-12)
    check_grads(ops.instance_norm, x)


# -- softmax, embedding, dropout, loss ----------------------------------------

def test_masked_softmax_rows_and_gradient():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(3, 5))
    mask = np.array([False, False, True, False, True])
    y = ops.masked_softmax(x, mask).data
    assert np.allclose(y.sum(-1), 1.0, atol=1e-12) and np.all(y[:, mask] == 0)
    check_grads(lambda a: ops.masked_softmax(a, mask), x)
    with pytest.raises(MaskError):
        ops.masked_softmax(x, np.ones(5, dtype=bool))


def test_embedding_gradient_touches_only_used_rows():
    table = leaf(np.random.default_rng(11).normal(size=(6, 3)))
    backward(ops.sum(ops.embedding(table, [[1, 4], [4, 0]])))
    assert np.array_equal(np.flatnonzero(table.grad.any(axis=1)), [0, 1, 4])
    assert np.all(table.grad[4] == 2.0)


def test_dropout_is_identity_in_eval_and_inverted_in_training():
    x = Tensor(np.ones((200, 50)))
    assert ops.dropout(x, 0.1, None, training=False) is x
    y = ops.dropout(x, 0.1, np.random.default_rng(0), training=True).data
    kept = y != 0
    assert np.allclose(y[kept], 1 / 0.9)
    assert abs(kept.mean() - 0.9) < 0.01


def test_bce_closed_forms():
    assert ops.bce_with_logits(np.array([0.0]), [1]).item() == pytest.approx(np.log(2), abs=1e-12)
    assert ops.bce_with_logits(np.array([50.0]), [1]).item() < 1e-20
    z = np.random.default_rng(12).normal(size=5) * 3
    y = np.array([1, 0, 1, 1, 0])
    check_grads(lambda a: ops.bce_with_logits(a, y), z)


# -- backward semantics -------------------------------------------------------

def test_backward_identity_and_square():
    x = leaf([1.0, -2.0, 3.0])
    backward(ops.sum(x))
    assert x.grad.tolist() == [1.0, 1.0, 1.0]
    x = leaf([1.0, -2.0, 3.0])
    backward(ops.sum(ops.mul(x, x)))
    assert x.grad.tolist() == [2.0, -4.0, 6.0]


def test_backward_requires_scalar():
    with pytest.raises(ContractError):
        backward(ops.mul(leaf([1.0, 2.0]), 2.0))


def test_gradients_accumulate_exactly():
    rng = np.random.default_rng(13)
    w = leaf(rng.normal(size=(4, 3)))
    x = rng.normal(size=(5, 4))

    def loss():
        return ops.sum(ops.tanh(ops.matmul(x, w)))

    backward(loss())
    once = w.grad.copy()
    backward(loss())
    assert np.array_equal(w.grad, 2 * once)


def test_no_grad_records_nothing():
    w = leaf([1.0, 2.0])
    with no_grad():
        y = ops.mul(w, 3.0)
    assert not y.requires_grad


def test_debug_mode_flags_non_finite():
    with debug_mode():
        with pytest.raises(NumericalError):
            ops.mul(Tensor([1.0]), np.inf)
    ops.mul(Tensor([1.0]), np.inf)  # silent outside debug mode


def test_forward_is_deterministic():
    rng = np.random.default_rng(14)
    x, w = rng.normal(size=(2, 3, 6, 6)), rng.normal(size=(4, 3, 3, 3))
    assert np.array_equal(ops.conv2d(x, w, padding=1).data, ops.conv2d(x, w, padding=1).data)


# -- optimiser ----------------------------------------------------------------

def _state(p, lr, wd=0.0):
    return OptimizerState(groups=[ParamGroup("g", [p], lr, wd)])


def test_adam_zero_gradient_no_decay_is_noop():
    p = leaf([1.0, -2.0])
    adam_step(_state(p, 0.1), [p], [np.zeros(2)])
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_closed_form():
    p = leaf([0.5])
    adam_step(_state(p, 0.1), [p], [np.ones(1)])
    assert p.data[0] == pytest.approx(0.5 - 0.1, abs=1e-8)


def test_adam_decoupled_weight_decay_closed_form():
    p = leaf([2.0, -4.0])
    adam_step(_state(p, 3e-4, 1e-2), [p], [np.zeros(2)])
    assert np.allclose(p.data, np.array([2.0, -4.0]) * (1 - 3e-6), rtol=0, atol=1e-15)


def test_adam_shape_mismatch():
    p = leaf([1.0, 2.0])
    with pytest.raises(StateError):
        adam_step(_state(p, 0.1), [p], [np.ones(3)])


def test_adam_wrapper_uses_param_grads():
    p = leaf([1.0])
    opt = Adam([ParamGroup("g", [p], 0.1)])
    p.grad = np.array([2.0])
    opt.step()
    assert p.data[0] == pytest.approx(0.9, abs=1e-7)


def test_clip_three_four_five():
    g = [np.array([3.0]), np.array([4.0])]
    assert clip_global_norm(g, 1.0) == 5.0
    assert np.allclose(np.concatenate(g), [0.6, 0.8])


def test_clip_noop_below_threshold():
    g = [np.array([0.3, 0.4])]
    assert clip_global_norm(g, 1.0) == pytest.approx(0.5)
    assert g[0].tolist() == [0.3, 0.4]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=12), st.floats(1e-3, 10.0))
def test_clip_bound_and_idempotence(values, max_norm):
    grads = [np.array(values[: len(values) // 2 + 1]), np.array(values[len(values) // 2 + 1:])]
    clip_global_norm(grads, max_norm)
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    assert norm <= max_norm + 1e-12
    before = [g.copy() for g in grads]
    clip_global_norm(grads, max_norm)
    for a, b in zip(before, grads):
        assert np.allclose(a, b, rtol=1e-15, atol=0)
