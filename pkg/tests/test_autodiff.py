import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage

from psfuse import linops
from psfuse.autodiff import SGD, Adam, Param, Tensor, ops
from psfuse.autodiff.gradcheck import analytic_grads, check, numeric_grad, relative_error

F64_TOL = 1e-6
F32_TOL = 1e-3


def projector(shape, seed=7):
    """Scalar probe sum(out * W) with a fixed random W in the output's dtype."""
    weights = np.random.default_rng(seed).normal(size=shape)

    def probe(t):
        return ops.sum(t * Tensor(weights.astype(t.dtype)))

    return probe


def away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(x >= 0, x + margin, x - margin)


def both_precisions(fn, inputs):
    assert check(fn, inputs, 1e-5, np.float64) <= F64_TOL
    assert check(fn, inputs, 1e-5, np.float32) <= F32_TOL


# ---------------------------------------------------------------- primitives
def test_arithmetic_gradients(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) + 3.0
    p = projector((2, 3))
    both_precisions(lambda x, y: p(x + y), [a, b])
    both_precisions(lambda x, y: p(x - y), [a, b])
    both_precisions(lambda x, y: p(x * y), [a, b])
    both_precisions(lambda x, y: p(x / y), [a, b])
    both_precisions(lambda x: p(ops.square(x)), [a])
    both_precisions(lambda x: p(ops.scale(x, 1.7)), [a])
    both_precisions(lambda x: p(ops.shift(x, 0.3)), [a])


def test_broadcast_gradients(rng):
    a, b = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(1, 3, 1, 1))
    p = projector((2, 3, 4, 4))
    both_precisions(lambda x, y: p(x * y), [a, b])
    both_precisions(lambda x, y: p(x + y), [a, b])


def test_reductions_and_mse(rng):
    a, b = rng.normal(size=(2, 5)), rng.normal(size=(2, 5))
    both_precisions(lambda x: ops.mean(ops.square(x)), [a])
    both_precisions(lambda x: ops.sum(ops.square(x)), [a])
    both_precisions(lambda x, y: ops.mse(x, y), [a, b])


def test_activations(rng):
    x = away_from_zero(rng, (2, 3, 4))
    p = projector((2, 3, 4))
    both_precisions(lambda t: p(ops.relu(t)), [x])
    both_precisions(lambda t: p(ops.lrelu(t, 0.2)), [x])


def test_lrelu_slope():
    out = ops.lrelu(Tensor(np.array([-1.0, 2.0])), 0.2)
    np.testing.assert_allclose(out.data, [-0.2, 2.0])


def test_concat(rng):
    a, b = rng.normal(size=(1, 2, 3, 3)), rng.normal(size=(1, 3, 3, 3))
    p = projector((1, 5, 3, 3))
    both_precisions(lambda x, y: p(ops.concat([x, y], axis=1)), [a, b])


@pytest.mark.parametrize("mode", ["reflect", "zero"])
def test_pad2d(rng, mode):
    x = rng.normal(size=(1, 2, 4, 5))
    p = projector((1, 2, 4 + 3, 5 + 5))
    both_precisions(lambda t: p(ops.pad2d(t, (1, 2, 3, 2), mode)), [x])


def test_pad2d_reflect_is_reflect101(rng):
    x = rng.normal(size=(1, 1, 5, 6))
    got = ops.pad2d(Tensor(x), (2, 2, 2, 2)).data
    np.testing.assert_array_equal(got, np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)), "reflect"))


def test_reflect_index_folds_past_edge():
    idx = linops.reflect_index(3, 5, 0)
    assert idx.tolist() == [1, 0, 1, 2, 1, 0, 1, 2]


def dense_conv(x, w, stride, dilation, padding):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    pad = dilation * (k - 1) // 2
    if padding == "reflect":
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), "reflect")
    elif padding == "zero":
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x
    oh = (xp.shape[2] - dilation * (k - 1) - 1) // stride + 1
    ow = (xp.shape[3] - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for q in range(o):
            for i in range(oh):
                for j in range(ow):
                    y0, x0 = i * stride, j * stride
                    patch = xp[b, :, y0:y0 + dilation * (k - 1) + 1:dilation,
                               x0:x0 + dilation * (k - 1) + 1:dilation]
                    out[b, q, i, j] = np.sum(patch * w[q])
    return out


@given(st.sampled_from([1, 2]), st.sampled_from([1, 2, 3]),
       st.sampled_from(["reflect", "zero", "valid"]), st.integers(0, 2 ** 31))
def test_conv2d_matches_dense_oracle(stride, dilation, padding, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 9, 8))
    w = rng.normal(size=(4, 3, 3, 3))
    got = ops.conv2d(Tensor(x), Tensor(w), stride=stride, dilation=dilation,
                     padding=padding).data
    np.testing.assert_allclose(got, dense_conv(x, w, stride, dilation, padding), atol=1e-12)


def test_conv2d_matches_scipy_correlate(rng):
    x = rng.normal(size=(1, 1, 10, 10))
    w = rng.normal(size=(1, 1, 3, 3))
    got = ops.conv2d(Tensor(x), Tensor(w), padding="reflect").data[0, 0]
    want = ndimage.correlate(x[0, 0], w[0, 0], mode="mirror")
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("stride,dilation,padding", [
    (1, 1, "reflect"), (2, 1, "reflect"), (1, 2, "reflect"), (1, 4, "zero"), (2, 1, "valid"),
])
def test_conv2d_gradients(rng, stride, dilation, padding):
    x = rng.normal(size=(2, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(3,))
    out_shape = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, dilation, padding).shape
    p = projector(out_shape)
    both_precisions(lambda t, k, c: p(ops.conv2d(t, k, c, stride, dilation, padding)), [x, w, b])


def test_conv2d_dilation_wider_than_image(rng):
    # dilation 16 on a 16x16 map needs the folded reflection
    x = rng.normal(size=(1, 1, 16, 16))
    w = rng.normal(size=(1, 1, 3, 3))
    p = projector((1, 1, 16, 16))
    assert check(lambda t, k: p(ops.conv2d(t, k, dilation=16)), [x, w]) <= F64_TOL


def test_deconv2d_gradients(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=(2,))
    p = projector((2, 2, 8, 10))
    both_precisions(lambda t, k, c: p(ops.deconv2d(t, k, c)), [x, w, b])


def test_deconv2d_is_adjoint_of_strided_conv(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    y = rng.normal(size=(2, 2, 8, 10))
    lhs = np.sum(ops.deconv2d(Tensor(x), Tensor(w)).data * y)
    rhs = np.sum(x * ops.conv2d(Tensor(y), Tensor(w), stride=2, padding="zero").data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_deconv2d_doubles_size():
    out = ops.deconv2d(Tensor(np.ones((1, 4, 3, 3))), Tensor(np.ones((4, 2, 3, 3))))
    assert out.shape == (1, 2, 6, 6)


def test_fixed_linear_maps(rng):
    x = rng.normal(size=(1, 2, 8, 8))
    both_precisions(lambda t: projector((1, 2, 4, 4))(ops.pyr_down(t)), [x])
    both_precisions(lambda t: projector((1, 2, 16, 16))(ops.pyr_up(t)), [x])
    both_precisions(lambda t: projector((1, 2, 32, 32))(ops.bilinear_up(t, 4)), [x])
    both_precisions(lambda t: projector((1, 2, 8, 8))(ops.box_mean(t, 2)), [x])


def test_box_mean_matches_scipy(rng):
    x = rng.normal(size=(1, 1, 9, 11))
    got = ops.box_mean(Tensor(x), 2).data[0, 0]
    want = ndimage.uniform_filter(x[0, 0], 5, mode="mirror")
    np.testing.assert_allclose(got, want, atol=1e-12)


# -------------------------------------------------------------------- engine
def test_backward_requires_scalar():
    t = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (t * 2.0).backward()


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x + x  # dy/dx = 2x + 1
    y.backward()
    assert float(x.grad) == 7.0


def test_leaf_gradients_accumulate_across_calls():
    x = Tensor(np.array(2.0), requires_grad=True)
    (x * 3.0).backward()
    (x * 3.0).backward()
    assert float(x.grad) == 6.0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ops.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.parents == ()


def test_float32_stays_float32(rng):
    x = Tensor(rng.normal(size=(1, 1, 4, 4)).astype(np.float32))
    w = Tensor(rng.normal(size=(1, 1, 3, 3)).astype(np.float32))
    y = ops.lrelu(ops.conv2d(x, w), 0.2) * 0.5 + 1.0
    assert y.dtype == np.float32
    assert ops.mean(y).dtype == np.float32


def test_numeric_grad_of_quadratic():
    g = numeric_grad(lambda t: ops.sum(ops.square(t)), [np.array([1.0, -2.0])], 0)
    np.testing.assert_allclose(g, [2.0, -4.0], atol=1e-8)
    assert relative_error([2.0, -4.0], g) < 1e-8
    assert analytic_grads(lambda t: ops.sum(ops.square(t)), [np.array([3.0])])[0][0] == 6.0


# ---------------------------------------------------------------- optimizers
def test_adam_matches_hand_computation():
    p = Param(np.array([1.0, -1.0]))
    opt = Adam({"p": p}, lr=0.1, betas=(0.5, 0.999))
    grads = [np.array([0.2, -0.4]), np.array([0.1, 0.3])]
    m = v = np.zeros(2)
    want = np.array([1.0, -1.0])
    for t, g in enumerate(grads, 1):
        p.grad = g
        opt.step()
        m = 0.5 * m + 0.5 * g
        v = 0.999 * v + 0.001 * g * g
        want = want - 0.1 * (m / (1 - 0.5 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, want, rtol=1e-12)


def test_sgd_is_plain_descent():
    p = Param(np.array([1.0]))
    opt = SGD({"p": p}, lr=0.5)
    p.grad = np.array([2.0])
    opt.step()
    assert p.data[0] == 0.0
    opt.zero_grad()
    assert p.grad is None


def test_param_init_statistics():
    w = Param.gaussian((64, 64, 3, 3), np.random.default_rng(0))
    assert w.dtype == np.float32
    assert abs(float(w.data.std()) - 0.02) < 1e-3
    assert Param.zeros((5,)).data.sum() == 0
