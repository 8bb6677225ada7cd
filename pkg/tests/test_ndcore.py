import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from microformer.ndcore import (BatchNormStats, NonFiniteError, Tape, Tensor, backward,
                                check_gradients, ops)

RNG = np.random.default_rng(1234)


def param(shape, scale=1.0, rng=RNG):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)


def weighted(out, seed=7):
    """Scalar probe sum(out * w) with fixed random weights."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return ops.sum(ops.mul(out, w))


# -- forward examples -------------------------------------------------------------

def test_linear_examples():
    assert np.allclose(ops.linear([1.0, 0.0], np.eye(2), np.zeros(2)).data, [1, 0])
    assert np.allclose(ops.linear([1.0, 2.0], [[1.0], [1.0]], [0.5]).data, [3.5])
    W = RNG.normal(size=(4, 3))
    b = RNG.normal(size=3)
    assert np.allclose(ops.linear(np.zeros(4), W, b).data, b)


def test_linear_shape_mismatch():
    with pytest.raises(ValueError):
        ops.linear(np.ones(3), np.ones((2, 2)), np.zeros(2))


def test_activation_examples():
    assert np.array_equal(ops.activation([-1.0, 2.0], "relu").data, [0, 2])
    assert ops.activation([0.0], "sigmoid").data[0] == 0.5
    assert np.allclose(ops.activation([0.0, 0.0, 0.0], "softmax-lastdim").data, 1 / 3)
    with pytest.raises(ValueError):
        ops.activation([1.0], "tanh")


def test_conv2d_examples():
    ones = np.ones((1, 3, 3))
    assert np.array_equal(ops.conv2d(ones, np.zeros((1, 1, 3, 3))).data, np.zeros((1, 3, 3)))
    delta = np.zeros((1, 5, 5))
    delta[0, 2, 1] = 1.0
    kd = np.zeros((1, 1, 3, 3))
    kd[0, 0, 1, 1] = 1.0
    assert np.array_equal(ops.conv2d(delta, kd).data, delta)
    counts = ops.conv2d(ones, np.ones((1, 1, 3, 3))).data[0]
    assert np.array_equal(counts, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv2d_matches_direct_loop():
    x = RNG.normal(size=(2, 3, 6, 6))
    k = RNG.normal(size=(4, 3, 3, 3))
    b = RNG.normal(size=4)
    out = ops.conv2d(x, k, b).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(6):
                for j in range(6):
                    ref[n, o, i, j] = (xp[n, :, i:i + 3, j:j + 3] * k[o]).sum() + b[o]
    assert np.allclose(out, ref, atol=1e-12)


def test_conv2d_errors():
    with pytest.raises(ValueError):
        ops.conv2d(np.ones((2, 4, 4)), np.ones((1, 1, 3, 3)))
    with pytest.raises(ValueError):
        ops.conv2d(np.ones((1, 4, 4)), np.ones((1, 1, 2, 2)))


def test_maxpool_examples():
    assert ops.maxpool2d([[[1.0, 2.0], [3.0, 4.0]]]).data.tolist() == [[[4.0]]]
    const = np.full((2, 4, 6), 3.5)
    assert np.array_equal(ops.maxpool2d(const).data, np.full((2, 2, 3), 3.5))
    assert ops.maxpool2d([[[-1.0, -2.0], [-3.0, -4.0]]]).data.tolist() == [[[-1.0]]]
    with pytest.raises(ValueError):
        ops.maxpool2d(np.ones((1, 3, 4)))


def test_maxpool_ties_route_to_first():
    x = Tensor(np.ones((1, 2, 2)), requires_grad=True)
    with Tape() as tape:
        y = ops.sum(ops.maxpool2d(x))
    g = backward(y, tape)[x.id]
    assert g.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


def test_layernorm_examples():
    one = np.ones(3)
    out = ops.layer_norm([1.0, 1.0, 1.0], one, np.zeros(3)).data
    assert np.array_equal(out, [0, 0, 0])
    out = ops.layer_norm([-1.0, 1.0], np.ones(2), np.zeros(2)).data
    assert np.allclose(out, [-1, 1], atol=1e-5)
    x = RNG.normal(size=8)
    x -= x.mean()
    out = ops.layer_norm(x, np.ones(8), np.full(8, 5.0)).data
    assert abs(out.mean() - 5.0) < 1e-12


def test_batchnorm_train_eval():
    stats = BatchNormStats(3)
    x = RNG.normal(loc=2.0, size=(10, 3))
    out = ops.batch_norm(x, np.ones(3), np.zeros(3), stats, train=True).data
    assert np.allclose(out.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(out.var(axis=0), 1, atol=1e-4)
    assert np.allclose(stats.mean, 0.1 * x.mean(axis=0))
    with pytest.raises(ValueError):
        ops.batch_norm(x[:1], np.ones(3), np.zeros(3), stats, train=True)
    # eval uses running stats and accepts a batch of one
    fresh = BatchNormStats(3)
    assert np.allclose(ops.batch_norm(x[:1], np.ones(3), np.zeros(3), fresh, train=False).data,
                       x[:1] / np.sqrt(1 + 1e-5))


# -- backward ---------------------------------------------------------------------

def test_backward_sum_and_square():
    x = param((3, 4))
    with Tape() as tape:
        loss = ops.sum(x)
    assert np.array_equal(backward(loss, tape)[x.id], np.ones((3, 4)))
    y = Tensor(3.0, requires_grad=True)
    with Tape() as tape:
        loss = y * y
    assert backward(loss, tape)[y.id] == pytest.approx(6.0)


def test_backward_requires_scalar():
    x = param((2,))
    with Tape() as tape:
        out = x * 2.0
    with pytest.raises(ValueError):
        backward(out, tape)


def test_tape_order_and_single_visit():
    x = param((2,))
    with Tape() as tape:
        a = x * 2.0
        b = a + x
        loss = ops.sum(b)
    ids = [e.output.id for e in tape.entries]
    assert ids == sorted(ids)
    for e in tape.entries:
        assert all(inp.id < e.output.id for inp in e.inputs)
    assert np.allclose(backward(loss, tape)[x.id], 3.0)


def test_no_recording_without_tape():
    x = param((2,))
    y = x * 2.0
    assert not y.requires_grad


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_is_error():
    with pytest.raises(NonFiniteError):
        ops.mul(Tensor([1e308]), 1e10)


# finite-difference checks for every differentiable op (max rel err < 1e-4)
OP_CASES = {
    "add": lambda a, b: ops.add(a, b),
    "sub": lambda a, b: ops.sub(a, b),
    "mul": lambda a, b: ops.mul(a, b),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_grad_elementwise_broadcast(name):
    a, b = param((3, 4)), param((4,))
    assert check_gradients(lambda: weighted(OP_CASES[name](a, b)), [a, b]) < 1e-4


def test_grad_matmul_batched():
    a, b = param((2, 3, 4)), param((4, 5))
    assert check_gradients(lambda: weighted(ops.matmul(a, b)), [a, b]) < 1e-4


def test_grad_reductions_and_shapes():
    x = param((2, 3, 4))
    fns = [
        lambda: weighted(ops.sum(x, axis=1)),
        lambda: weighted(ops.mean(x, axis=(0, 2), keepdims=True)),
        lambda: weighted(ops.reshape(x, (6, 4))),
        lambda: weighted(ops.transpose(x, (2, 0, 1))),
        lambda: weighted(ops.concat([x, ops.mul(x, 2.0)], axis=1)),
    ]
    for fn in fns:
        assert check_gradients(fn, [x]) < 1e-4


def test_grad_linear():
    x, W, b = param((2, 5, 3)), param((3, 4)), param((4,))
    assert check_gradients(lambda: weighted(ops.linear(x, W, b)), [x, W, b]) < 1e-4


@pytest.mark.parametrize("kind", ["relu", "elu", "sigmoid", "softmax"])
def test_grad_activations(kind):
    x = Tensor(RNG.uniform(0.1, 2.0, size=(3, 5)) * RNG.choice([-1, 1], size=(3, 5)),
               requires_grad=True)
    assert check_gradients(lambda: weighted(ops.activation(x, kind)), [x]) < 1e-4


def test_grad_dropout_fixed_seed():
    x = param((4, 6))
    fn = lambda: weighted(ops.dropout(x, 0.3, np.random.default_rng(5), True))  # noqa: E731
    assert check_gradients(fn, [x]) < 1e-4


def test_grad_layer_norm():
    x, g, b = param((3, 6)), param((6,)), param((6,))
    assert check_gradients(lambda: weighted(ops.layer_norm(x, g, b)), [x, g, b]) < 1e-4


@pytest.mark.parametrize("train", [True, False])
@pytest.mark.parametrize("shape", [(6, 3), (4, 3, 2, 2)])
def test_grad_batch_norm(train, shape):
    x, g, b = param(shape), param((3,)), param((3,))
    stats = BatchNormStats(3)
    stats.mean = RNG.normal(size=3)
    stats.var = RNG.uniform(0.5, 2, size=3)
    frozen = (stats.mean.copy(), stats.var.copy())

    def fn():
        stats.mean, stats.var = frozen[0].copy(), frozen[1].copy()
        return weighted(ops.batch_norm(x, g, b, stats, train=train))

    assert check_gradients(fn, [x, g, b]) < 1e-4


@pytest.mark.parametrize("stride", [1, 2])
def test_grad_conv2d(stride):
    x, k, b = param((2, 2, 5, 5)), param((3, 2, 3, 3)), param((3,))
    fn = lambda: weighted(ops.conv2d(x, k, b, stride=stride))  # noqa: E731
    assert check_gradients(fn, [x, k, b], max_per_tensor=None) < 1e-4


def test_grad_maxpool():
    x = param((2, 4, 6))
    assert check_gradients(lambda: weighted(ops.maxpool2d(x)), [x], max_per_tensor=None) < 1e-4


def test_grad_attention_masked():
    q, k, v = param((2, 4, 3)), param((2, 4, 3)), param((2, 4, 5))
    mask = np.tril(np.ones((4, 4), dtype=bool))
    fn = lambda: weighted(ops.attention(q, k, v, mask))  # noqa: E731
    assert check_gradients(fn, [q, k, v], max_per_tensor=None) < 1e-4


def test_grad_mse_masked():
    p = param((3, 4, 2))
    target = RNG.normal(size=(3, 4, 2))
    mask = RNG.random((3, 4)) > 0.3
    assert check_gradients(lambda: ops.mse(p, target, mask), [p]) < 1e-4


# -- properties -------------------------------------------------------------------

finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, min_side=1, max_side=6),
                  elements=finite))
def test_softmax_rows_normalized(x):
    p = ops.softmax(x).data
    assert (p >= 0).all()
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dropout_deterministic_and_eval_identity(seed):
    x = np.random.default_rng(seed).normal(size=(5, 7))
    a = ops.dropout(x, 0.1, np.random.default_rng(seed), True).data
    b = ops.dropout(x, 0.1, np.random.default_rng(seed), True).data
    assert np.array_equal(a, b)
    assert np.array_equal(ops.dropout(x, 0.1, None, False).data, x)


def test_attention_rows_sum_to_one_and_all_masked_error():
    q = RNG.normal(size=(3, 4))
    _, p = ops.attention(q, q, q, np.tril(np.ones((3, 3), dtype=bool)), return_weights=True)
    assert np.allclose(p.sum(-1), 1, atol=1e-12)
    mask = np.ones((3, 3), dtype=bool)
    mask[1] = False
    with pytest.raises(ValueError):
        ops.attention(q, q, q, mask)
    additive = np.where(np.tril(np.ones((3, 3))) > 0, 0.0, -np.inf)
    assert np.allclose(ops.attention(q, q, q, additive).data,
                       ops.attention(q, q, q, additive == 0).data)
