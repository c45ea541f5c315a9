import numpy as np
import pytest

from psfuse import dmg, resample
from psfuse.autodiff import Tensor, ops
from psfuse.autodiff.gradcheck import check


def reflect_windows(img, r):
    """All (2r+1)^2 windows of a reflect-101 padded plane, as a (h, w, k*k) array."""
    p = np.pad(img, r, mode="reflect")
    k = 2 * r + 1
    h, w = img.shape
    return np.stack([p[i:i + h, j:j + w] for i in range(k) for j in range(k)], axis=-1)


def normal_equations(g, x, lam):
    """argmin_{m,n} sum (m g + n - x)^2 + N lam m^2 via the 2x2 normal equations."""
    n = g.size
    a = np.array([[np.dot(g, g) + n * lam, g.sum()], [g.sum(), n]])
    rhs = np.array([np.dot(g, x), x.sum()])
    return np.linalg.solve(a, rhs)


def test_ridge_matches_normal_equations(rng):
    guide = rng.random((1, 2, 9, 10))
    ms = rng.random((1, 2, 9, 10))
    for lam in (0.0, 1e-4, 1e-2):
        m, n = dmg.ridge_coefficients(guide, ms, 2, lam)
        for band in range(2):
            gw = reflect_windows(guide[0, band], 2)
            xw = reflect_windows(ms[0, band], 2)
            for i, j in [(0, 0), (4, 5), (8, 9), (3, 0)]:
                want = normal_equations(gw[i, j], xw[i, j], lam)
                np.testing.assert_allclose([m.data[0, band, i, j], n.data[0, band, i, j]],
                                           want, rtol=1e-8, atol=1e-12)


def test_exact_linear_recovery(rng):
    guide = rng.random((1, 1, 12, 12))
    ms = 2.5 * guide - 0.75
    m, n = dmg.ridge_coefficients(guide, ms, 2, 0.0)
    np.testing.assert_allclose(m.data, 2.5, atol=1e-10)
    np.testing.assert_allclose(n.data, -0.75, atol=1e-10)


def test_constant_guide_without_regularisation_is_singular():
    with pytest.raises(dmg.SingularWindowError):
        dmg.ridge_coefficients(np.ones((1, 1, 6, 6)), np.zeros((1, 1, 6, 6)), 1, 0.0)
    m, n = dmg.ridge_coefficients(np.ones((1, 1, 6, 6)), np.full((1, 1, 6, 6), 0.3), 1, 1e-4)
    np.testing.assert_allclose(m.data, 0.0, atol=1e-12)
    np.testing.assert_allclose(n.data, 0.3, atol=1e-12)


def test_guided_coeffs_shapes(rng):
    c = dmg.guided_coeffs(rng.random((2, 4, 8, 8)), rng.random((2, 4, 8, 8)), ratio=4)
    assert c.m_l.shape == (2, 4, 8, 8)
    assert c.m_h.shape == (2, 4, 32, 32)
    assert (c.radius, c.lambda_reg) == (2, 1e-4)


def test_guided_coeffs_gradient(rng):
    g = rng.random((1, 2, 6, 6))
    x = rng.random((1, 2, 6, 6))
    w = rng.normal(size=(1, 2, 12, 12))

    def fn(a, b):
        c = dmg.guided_coeffs(a, b, 2, radius=1, lambda_reg=1e-2)
        return ops.sum((c.m_h + c.n_h) * Tensor(w.astype(a.dtype)))

    assert check(fn, [g, x]) <= 1e-6


def test_dmg_net_architecture():
    net = dmg.DmgNet()
    assert [d for _, _, d in net.layers] == [1, 1, 2, 4, 8, 16, 1, 1]
    assert [w.shape for w, _, _ in net.layers][-1] == (4, 32, 1, 1)
    assert all(w.shape[0] == 32 for w, _, _ in net.layers[:-1])
    assert all(name.startswith("dmg.") for name in net.parameters())
    assert net.receptive_field(6) == 65
    assert net.receptive_field(7) == 67


def gradient_support(net, layer, size=101):
    x = Tensor(np.zeros((1, 1, size, size)), requires_grad=True)
    out = net(x, upto=layer)
    c = size // 2
    ops.sum(_pick(out, c)).backward()
    nz = np.argwhere(np.abs(x.grad[0, 0]) > 0)
    return nz[:, 0].max() - nz[:, 0].min() + 1, nz[:, 1].max() - nz[:, 1].min() + 1


def _pick(out, c):
    mask = np.zeros(out.shape)
    mask[:, :, c, c] = 1.0
    return out * Tensor(mask)


def test_receptive_field_probe():
    net = dmg.DmgNet(rng=np.random.default_rng(3), dtype=np.float64)
    assert gradient_support(net, 6) == (65, 65)
    assert gradient_support(net, 7) == (67, 67)
    assert gradient_support(net, 8) == (67, 67)


def test_dmg_fuse_shapes_and_loss(rng):
    net = dmg.DmgNet(rng=rng)
    pan = rng.random((2, 1, 32, 32)).astype(np.float32)
    ms = rng.random((2, 4, 8, 8)).astype(np.float32)
    fused, coeffs = dmg.dmg_fuse(net, pan, ms)
    assert fused.shape == (2, 4, 32, 32)
    assert coeffs.m_h.shape == (2, 4, 32, 32)
    assert fused.dtype == np.float32
    loss = dmg.dmg_loss(fused, np.zeros((2, 4, 32, 32), np.float32))
    loss.backward()
    assert all(p.grad is not None for p in net.parameters().values())
    with pytest.raises(ValueError):
        dmg.dmg_fuse(net, pan, ms[:, :, :4, :4])


def test_degrade_pan_uses_pan_mtf(rng):
    pan = rng.random((1, 1, 16, 16))
    want = resample.blur_decimate_array(pan, resample.mtf_gaussian_kernel(0.15, 4).taps, 4)
    np.testing.assert_array_equal(dmg.degrade_pan(pan, 4), want)


def test_dmg_end_to_end_gradcheck(rng):
    net = dmg.DmgNet(channels=3, rng=rng, std=0.5, dtype=np.float64)
    pan = rng.random((1, 1, 16, 16))
    ms = rng.random((1, 4, 4, 4))
    ref = rng.random((1, 4, 16, 16))
    w_orig, b_orig, dil = net.layers[2]

    def fn(weight, m):
        net.layers[2] = (weight, b_orig, dil)
        try:
            fused, _ = dmg.dmg_fuse(net, pan, m, ratio=4, radius=1)
            return dmg.dmg_loss(fused, ref)
        finally:
            net.layers[2] = (w_orig, b_orig, dil)

    assert check(fn, [w_orig.data, ms]) <= 1e-6
