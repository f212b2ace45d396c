import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advdistill.autodiff import (
    Adam,
    AdamState,
    NonFiniteGradientError,
    ShapeError,
    Tensor,
    adam_step,
    check_gradients,
    clip_grad_norm,
    clip_grad_value,
    forward_primitive,
    ops,
)

RNG_SEEDS = range(10)
TOL = 1e-6


def leaf(rng, *shape, positive=False):
    v = rng.uniform(0.2, 2.0, size=shape) if positive else rng.normal(size=shape)
    return Tensor(v, requires_grad=True)


def weighted_sum(out, rng):
    """Scalar probe: sum(out * W) with fixed random W, so every output element matters."""
    w = Tensor(rng.normal(size=out.shape))
    return ops.sum(ops.mul(out, w))


# --- forward values ---------------------------------------------------------

def test_softmax_uniform():
    np.testing.assert_array_equal(ops.softmax(Tensor([0.0, 0.0])).values, [0.5, 0.5])


def test_sigmoid_zero():
    assert ops.sigmoid(Tensor(0.0)).item() == 0.5


def test_leaky_relu_negative():
    assert ops.leaky_relu(Tensor([-2.0]), alpha=0.01).values[0] == pytest.approx(-0.02, abs=1e-15)


def test_forward_primitive_dispatch():
    out = forward_primitive("leaky_relu", Tensor([-2.0, 3.0]), alpha=0.01)
    np.testing.assert_allclose(out.values, [-0.02, 3.0])
    assert out.node.op == "leaky_relu"
    with pytest.raises(ValueError, match="unknown primitive"):
        forward_primitive("conv2d", Tensor([1.0]))


def test_matmul_shape_error_names_primitive():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError, match="empty axis"):
        ops.softmax(Tensor(np.ones((3, 0))), axis=1)
    with pytest.raises(ShapeError, match="empty axis"):
        ops.log_softmax(Tensor(np.ones((0,))))


def test_log_softmax_large_logits_stay_finite():
    out = ops.log_softmax(Tensor([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(out.values))
    assert out.values[0] == pytest.approx(0.0, abs=1e-12)


def test_embedding_gather_out_of_range():
    with pytest.raises(ShapeError, match="embedding_gather"):
        ops.embedding_gather(Tensor(np.ones((5, 2))), np.array([[0, 5]]))


def test_mean_pool_respects_lengths():
    x = Tensor(np.arange(12, dtype=float).reshape(2, 3, 2))
    out = ops.mean_pool(x, [1, 3])
    np.testing.assert_allclose(out.values, [[0.0, 1.0], [8.0, 9.0]])


def test_add_rejects_general_broadcast():
    with pytest.raises(ShapeError, match="add"):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1))))


# --- backward ---------------------------------------------------------------

def test_backward_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ops.sum(ops.mul(x, x)).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        ops.mul(x, x).backward()


def test_backward_accumulates_until_zeroed():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ops.sum(x).backward()
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    x.zero_grad()
    ops.sum(x).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])


def test_off_path_leaf_grad_stays_zero():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = Tensor([3.0, 4.0], requires_grad=True)
    _ = ops.mul(y, y)
    ops.sum(ops.mul(x, x)).backward()
    np.testing.assert_array_equal(y.grad, [0.0, 0.0])


def test_detach_blocks_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    ops.sum(ops.mul(x.detach(), x)).backward()
    np.testing.assert_array_equal(x.grad, [1.0, 2.0])


def test_log_softmax_grad_rows_sum_to_zero():
    rng = np.random.default_rng(0)
    z = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    onehot = np.eye(5)[[0, 3, 1, 4]]
    # upstream gradient is one-hot; the row sums of d/dz vanish
    ops.sum(ops.mul(ops.log_softmax(z, axis=1), Tensor(onehot))).backward()
    np.testing.assert_allclose(z.grad.sum(axis=1), 0.0, atol=1e-12)
    p = np.exp(ops.log_softmax(Tensor(z.values), axis=1).values)
    np.testing.assert_allclose(z.grad, onehot - p, atol=1e-12)


def test_grad_reverse_identity_forward_negated_backward():
    x = Tensor([1.0, -2.0], requires_grad=True)
    y = ops.grad_reverse(x, 0.5)
    np.testing.assert_array_equal(y.values, x.values)
    ops.sum(ops.mul(y, Tensor([3.0, 4.0]))).backward()
    np.testing.assert_array_equal(x.grad, [-1.5, -2.0])


# every primitive against central differences at 10 random fp64 points
PRIMITIVE_CASES = {
    "add": lambda r: (ops.add, [leaf(r, 3, 4), leaf(r, 3, 4)], {}),
    "add_bias": lambda r: (ops.add, [leaf(r, 3, 4), leaf(r, 4)], {}),
    "sub": lambda r: (ops.sub, [leaf(r, 3, 4), leaf(r, 4)], {}),
    "mul": lambda r: (ops.mul, [leaf(r, 3, 4), leaf(r, 3, 4)], {}),
    "scale": lambda r: (ops.scale, [leaf(r, 5)], {"c": -1.7}),
    "matmul": lambda r: (ops.matmul, [leaf(r, 3, 4), leaf(r, 4, 2)], {}),
    "transpose": lambda r: (ops.transpose, [leaf(r, 3, 4)], {}),
    "reshape": lambda r: (ops.reshape, [leaf(r, 3, 4)], {"shape": (2, 6)}),
    "relu": lambda r: (ops.relu, [leaf(r, 3, 4)], {}),
    "leaky_relu": lambda r: (ops.leaky_relu, [leaf(r, 3, 4)], {"alpha": 0.01}),
    "sigmoid": lambda r: (ops.sigmoid, [leaf(r, 3, 4)], {}),
    "exp": lambda r: (ops.exp, [leaf(r, 3, 4)], {}),
    "log": lambda r: (ops.log, [leaf(r, 3, 4, positive=True)], {}),
    "sum_all": lambda r: (ops.sum, [leaf(r, 3, 4)], {}),
    "sum_axis": lambda r: (ops.sum, [leaf(r, 3, 4)], {"axis": 1}),
    "mean": lambda r: (ops.mean, [leaf(r, 3, 4)], {"axis": 0}),
    "softmax": lambda r: (ops.softmax, [leaf(r, 3, 4)], {"axis": 1}),
    "log_softmax": lambda r: (ops.log_softmax, [leaf(r, 3, 4)], {"axis": 1}),
    "embedding_gather": lambda r: (ops.embedding_gather, [leaf(r, 6, 3)],
                                   {"ids": r.integers(0, 6, size=(2, 5))}),
    "mean_pool": lambda r: (ops.mean_pool, [leaf(r, 3, 4, 2)], {"lengths": r.integers(1, 5, size=3)}),
    "concatenate": lambda r: (lambda a, b: ops.concatenate([a, b], axis=0),
                              [leaf(r, 2, 3), leaf(r, 4, 3)], {}),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
@pytest.mark.parametrize("seed", RNG_SEEDS)
def test_primitive_gradients_match_finite_differences(name, seed):
    rng = np.random.default_rng(1000 + seed)
    fn, inputs, attrs = PRIMITIVE_CASES[name](rng)
    probe_rng_state = rng.bit_generator.state

    def f():
        rng.bit_generator.state = probe_rng_state
        out = fn(*inputs, **attrs)
        return out if out.ndim == 0 else weighted_sum(out, rng)

    assert check_gradients(f, inputs) < TOL


@pytest.mark.parametrize("seed", RNG_SEEDS)
def test_grad_reverse_is_negated_finite_difference(seed):
    from advdistill.autodiff import numerical_gradient, relative_error

    rng = np.random.default_rng(seed)
    x = leaf(rng, 3, 4)
    w = Tensor(rng.normal(size=(3, 4)))
    ops.sum(ops.mul(ops.grad_reverse(x, 0.7), w)).backward()
    fd = numerical_gradient(lambda: ops.sum(ops.mul(ops.grad_reverse(x, 0.7), w)), x)
    assert relative_error(x.grad, -0.7 * fd) < TOL


# --- properties -------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)),
       st.floats(-1e3, 1e3))
def test_softmax_shift_invariance(z, c):
    a = ops.softmax(Tensor(z)).values
    b = ops.softmax(Tensor(z + c)).values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_forward_purity_bit_identical():
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))

    def f():
        return ops.sum(ops.log_softmax(ops.matmul(x, w), axis=1))

    assert f().values.tobytes() == f().values.tobytes()


# --- Adam and clipping ------------------------------------------------------

def test_adam_first_step_magnitude():
    params = {"w": np.array([1.0])}
    adam_step(params, {"w": np.array([0.3])}, AdamState(lr=5e-5))
    assert params["w"][0] - 1.0 == pytest.approx(-5e-5, rel=0.01)


def test_adam_zero_gradient_leaves_params():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState(lr=1e-3)
    for _ in range(3):
        adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.step == 3


def test_adam_decreases_quadratic():
    theta = Tensor([1.0], requires_grad=True)
    opt = Adam({"theta": theta}, lr=0.1)
    for _ in range(10):
        opt.zero_grad()
        ops.sum(ops.mul(theta, theta)).backward()
        opt.step()
    # scalar simulation of the same recursion
    th, m, v = 1.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2 * th
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        th -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert abs(theta.values[0]) < 1.0
    assert theta.values[0] == pytest.approx(th, rel=1e-12)


def test_adam_rejects_non_finite_with_name():
    with pytest.raises(NonFiniteGradientError, match="enc.w"):
        adam_step({"enc.w": np.zeros(2)}, {"enc.w": np.array([np.nan, 0.0])}, AdamState(lr=1e-3))


def test_clip_grad_norm_examples():
    np.testing.assert_allclose(clip_grad_norm([np.array([3.0, 4.0])], 1.0)[0], [0.6, 0.8])
    np.testing.assert_array_equal(clip_grad_norm([np.array([0.1, 0.1])], 1.0)[0], [0.1, 0.1])
    assert clip_grad_norm([], 1.0) == []


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e3, 1e3)), max_size=4),
       st.floats(1e-3, 10))
def test_clip_grad_norm_bound(grads, max_norm):
    clipped = clip_grad_norm(grads, max_norm)
    norm = np.sqrt(sum(float((g * g).sum()) for g in clipped))
    assert norm <= max_norm + 1e-12 or norm == pytest.approx(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def test_clip_grad_value_examples():
    out = clip_grad_value([np.array([0.5, -0.5, 0.005])], 0.01)[0]
    np.testing.assert_array_equal(out, [0.01, -0.01, 0.005])
