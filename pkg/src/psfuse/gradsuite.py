"""Finite-difference checks of every differentiable primitive and of the
training losses, shared by the ``gradcheck`` command and the test suite."""

import time

import numpy as np

from . import dmg, losses, ssrc
from .autodiff import ops
from .autodiff.gradcheck import check
from .autodiff.tensor import Tensor

TOLERANCE = {np.float64: 1e-6, np.float32: 1e-3}


def _probe(shape, seed=7):
    weights = np.random.default_rng(seed).normal(size=shape)

    def probe(t):
        return ops.sum(t * Tensor(weights.astype(t.dtype)))

    return probe


def _off_kink(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(x >= 0, x + margin, x - margin)


def primitive_cases(seed=0):
    """(name, fn, inputs) triples; fn maps input tensors to a scalar."""
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3)) + 3.0
    p23 = _probe((2, 3))
    img = rng.normal(size=(2, 2, 8, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=(3,))
    cases = [
        ("add", lambda x, y: p23(x + y), [a, b]),
        ("sub", lambda x, y: p23(x - y), [a, b]),
        ("mul", lambda x, y: p23(x * y), [a, b]),
        ("div", lambda x, y: p23(x / y), [a, b]),
        ("broadcast_mul", lambda x, y: _probe((2, 2, 8, 8))(x * y),
         [img, rng.normal(size=(1, 2, 1, 1))]),
        ("square", lambda x: p23(ops.square(x)), [a]),
        ("scale", lambda x: p23(ops.scale(x, 1.7)), [a]),
        ("shift", lambda x: p23(ops.shift(x, 0.3)), [a]),
        ("sum", lambda x: ops.sum(ops.square(x)), [a]),
        ("mean", lambda x: ops.mean(ops.square(x)), [a]),
        ("mse", lambda x, y: ops.mse(x, y), [a, b]),
        ("concat", lambda x, y: _probe((2, 4, 8, 8))(ops.concat([x, y])), [img, img * 0.5]),
        ("relu", lambda x: p23(ops.relu(x)), [_off_kink(rng, (2, 3))]),
        ("lrelu", lambda x: p23(ops.lrelu(x, 0.2)), [_off_kink(rng, (2, 3))]),
        ("pad2d_reflect", lambda x: _probe((2, 2, 14, 14))(ops.pad2d(x, (3, 3, 3, 3), "reflect")), [img]),
        ("pad2d_zero", lambda x: _probe((2, 2, 10, 10))(ops.pad2d(x, (1, 1, 1, 1), "zero")), [img]),
    ]
    for stride, dil, pad in ((1, 1, "reflect"), (2, 1, "reflect"), (1, 2, "reflect"),
                             (1, 16, "reflect"), (1, 4, "zero"), (2, 1, "valid")):
        shape = ops.conv2d(Tensor(img), Tensor(w), Tensor(bias), stride, dil, pad).shape
        probe = _probe(shape)
        cases.append((f"conv2d_s{stride}_d{dil}_{pad}",
                      lambda x, k, c, s=stride, d=dil, pd=pad, pr=probe:
                      pr(ops.conv2d(x, k, c, s, d, pd)),
                      [img, w, bias]))
    x_small = rng.normal(size=(2, 3, 4, 5))
    cases += [
        ("deconv2d", lambda x, k, c: _probe((2, 2, 8, 10))(ops.deconv2d(x, k, c)),
         [x_small, rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(2,))]),
        ("pyr_down", lambda x: _probe((2, 2, 4, 4))(ops.pyr_down(x)), [img]),
        ("pyr_up", lambda x: _probe((2, 2, 16, 16))(ops.pyr_up(x)), [img]),
        ("bilinear_up", lambda x: _probe((2, 2, 32, 32))(ops.bilinear_up(x, 4)), [img]),
        ("box_mean", lambda x: _probe((2, 2, 8, 8))(ops.box_mean(x, 2)), [img]),
    ]
    return cases


class _Swap:
    """Route a network parameter through a leaf tensor for the duration of fn."""

    def __init__(self, owner, index, slot):
        self.owner, self.index, self.slot = owner, index, slot
        self.orig = owner[index]

    def value(self):
        return self.orig[self.slot].data

    def __call__(self, leaf, fn):
        item = list(self.orig)
        item[self.slot] = leaf
        self.owner[self.index] = tuple(item)
        try:
            return fn()
        finally:
            self.owner[self.index] = self.orig


def loss_cases(seed=0, dtype=np.float64):
    """End-to-end losses differentiated with respect to parameters and inputs.

    Networks and fixed operands are built in ``dtype`` so the analytic pass
    runs entirely in that precision.
    """
    rng = np.random.default_rng(seed)
    net = dmg.DmgNet(channels=3, rng=rng, std=0.5, dtype=dtype)
    pan = rng.random((1, 1, 16, 16)).astype(dtype)
    ms = rng.random((1, 4, 4, 4))
    ref_small = rng.random((1, 4, 16, 16)).astype(dtype)
    dmg_swap = _Swap(net.layers, 2, 0)

    def dmg_loss(weight, m):
        def run():
            fused, _ = dmg.dmg_fuse(net, pan, m, ratio=4, radius=1)
            return dmg.dmg_loss(fused, ref_small)
        return dmg_swap(weight, run)

    gen_rng = np.random.default_rng(seed + 1)
    c2f = ssrc.PyramidGenerator("c2f", n_blocks=1, rng=gen_rng, std=0.3, dtype=dtype)
    f2c = ssrc.PyramidGenerator("f2c", n_blocks=1, rng=gen_rng, std=0.3, dtype=dtype)
    # narrow discriminators that downsample by 4 so 8x8 coarse images fit
    small = dict(channels=(4, 4, 4, 4, 4, 4, 1), strides=(1, 2, 2, 1, 1, 1, 1), rng=gen_rng,
                 std=0.3, dtype=dtype)
    d_f, d_c = ssrc.Discriminator(**small), ssrc.Discriminator(**small)
    coarse = rng.random((1, 4, 8, 8))
    fine = rng.random((1, 4, 32, 32)).astype(dtype)
    weights = losses.LossWeights()
    c2f_swap = _Swap(c2f.blocks[-1].decoder, 2, 1)
    f2c_swap = _Swap(f2c.blocks[-1].decoder, 2, 1)
    df_swap = _Swap(d_f.layers, 6, 1)

    def joint_c2f(bias, x):
        def run():
            ff = ssrc.c2f_forward(c2f, x)
            adv = losses.adv_gen_loss(d_f(ff), 1.0)
            cyc = losses.cycle_loss(ssrc.f2c_forward(f2c, ff), x)
            rec = losses.recon_loss(ff, fine)
            return losses.joint_loss(adv, cyc, rec, weights)
        return c2f_swap(bias, run)

    def joint_f2c(bias):
        # fixed operands follow the leaf's precision so the f64 reference stays f64
        y = Tensor(fine.astype(bias.dtype))

        def run():
            fc = ssrc.f2c_forward(f2c, y)
            adv = losses.adv_gen_loss(d_c(fc), 1.0)
            cyc = losses.cycle_loss(ssrc.c2f_forward(c2f, fc), y)
            rec = losses.recon_loss(fc, ssrc.coarse_of(y))
            return losses.joint_loss(adv, cyc, rec, weights)
        return f2c_swap(bias, run)

    def disc_f(bias, fake):
        return df_swap(bias, lambda: losses.disc_loss(d_f(Tensor(fine.astype(fake.dtype))), d_f(fake)))

    s, t = rng.normal(size=(2, 1, 3, 3)), rng.normal(size=(2, 1, 3, 3))
    return [
        ("loss_dmg", dmg_loss, [dmg_swap.value(), ms]),
        ("loss_adv_gen", lambda x: losses.adv_gen_loss(x, 1.0), [s]),
        ("loss_disc", lambda x, y: losses.disc_loss(x, y), [s, t]),
        ("loss_dc_dmg", lambda x, y: losses.dc_loss_dmg(x, y), [s, t]),
        ("loss_dc_f2c", lambda x, y: losses.dc_loss_f2c(x, y), [s, t]),
        ("loss_recon", lambda x, y: losses.recon_loss(x, y), [s, t]),
        ("loss_cycle", lambda x, y: losses.cycle_loss(x, y), [s, t]),
        ("loss_disc_fine_net", disc_f, [df_swap.value(), rng.random((1, 4, 8, 8))]),
        ("loss_joint_c2f", joint_c2f, [c2f_swap.value(), coarse]),
        ("loss_joint_f2c", joint_f2c, [f2c_swap.value()]),
    ]


def run(dtypes=(np.float64, np.float32), seed=0, eps=1e-5):
    """Rows of (name, dtype name, relative error, tolerance, passed) and the wall time."""
    start = time.perf_counter()
    rows = []
    for dtype in dtypes:
        for name, fn, inputs in primitive_cases(seed) + loss_cases(seed, dtype):
            err = check(fn, inputs, eps, dtype)
            tol = TOLERANCE[dtype]
            rows.append((name, np.dtype(dtype).name, err, tol, err <= tol))
    return rows, time.perf_counter() - start
