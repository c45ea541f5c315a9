"""Deep multiscale guidance: a dilated-conv feature net supplies the guidance
image for a per-window ridge regression of the MS bands, whose coefficients
are upsampled and applied at PAN resolution."""

from dataclasses import dataclass

import numpy as np

from . import resample
from .autodiff import ops
from .autodiff.tensor import Param, Tensor, as_tensor

DILATIONS = (1, 1, 2, 4, 8, 16, 1, 1)
DEFAULT_RADIUS = 2
DEFAULT_LAMBDA = 1e-4


class SingularWindowError(ArithmeticError):
    """A guided-filter window with sigma^2 + lambda = 0."""


class DmgNet:
    """Feature network f: 1-band image -> ``bands``-channel guidance, same size.

    Seven 3x3 layers with the dilations in ``DILATIONS`` and a final 1x1
    projection; LReLU(0.2) after every layer except the last.
    """

    def __init__(self, bands=4, channels=32, dilations=DILATIONS, rng=None, std=0.02,
                 dtype=np.float32, prefix="dmg"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.dilations = tuple(dilations)
        self.bands = bands
        self.layers = []
        n_in = 1
        for i, dil in enumerate(self.dilations):
            last = i == len(self.dilations) - 1
            k = 1 if last else 3
            n_out = bands if last else channels
            w = Param.gaussian((n_out, n_in, k, k), rng, std, dtype, name=f"{prefix}.conv{i + 1}.w")
            b = Param.zeros((n_out,), dtype, name=f"{prefix}.conv{i + 1}.b")
            self.layers.append((w, b, dil))
            n_in = n_out

    def parameters(self):
        out = {}
        for w, b, _ in self.layers:
            out[w.name] = w
            out[b.name] = b
        return out

    def __call__(self, x, upto=None):
        x = as_tensor(x)
        n = len(self.layers) if upto is None else upto
        for i, (w, b, dil) in enumerate(self.layers[:n]):
            x = ops.conv2d(x, w, b, dilation=dil, padding="reflect")
            if i < len(self.layers) - 1:
                x = ops.lrelu(x, 0.2)
        return x

    def receptive_field(self, layer):
        """Theoretical receptive field (pixels per side) after ``layer`` (1-based)."""
        rf = 1
        for w, _, dil in self.layers[:layer]:
            rf += (w.shape[-1] - 1) * dil
        return rf


def feature_map(net, img):
    """Guidance features of a 1-band image (Raster, array or Tensor)."""
    if hasattr(img, "bands"):
        img = img.data[None].astype(net.layers[0][0].dtype)
    return net(img)


@dataclass
class GuidedCoeffs:
    m_l: Tensor
    n_l: Tensor
    m_h: Tensor
    n_h: Tensor
    radius: int
    lambda_reg: float


def ridge_coefficients(guide, ms, radius, lambda_reg):
    """Per-window ridge fit ``ms ~ m * guide + n`` (before coefficient averaging).

    ``guide`` and ``ms`` are (N, b, h, w); band j of ``ms`` pairs with channel j
    of ``guide``. Differentiable with respect to both.
    """
    guide, ms = as_tensor(guide), as_tensor(ms)
    if guide.shape != ms.shape:
        raise ValueError(f"guide {guide.shape} and ms {ms.shape} must match")
    mu = ops.box_mean(guide, radius)
    x_bar = ops.box_mean(ms, radius)
    corr = ops.box_mean(guide * ms, radius)
    second = ops.box_mean(guide * guide, radius)
    var = second - mu * mu
    denom = var + lambda_reg if lambda_reg else var
    tiny = 64 * np.finfo(denom.dtype).eps * max(float(np.max(np.abs(second.data))), 1e-30)
    if np.any(denom.data <= tiny):
        raise SingularWindowError(
            "guided window with sigma^2 + lambda = 0 (constant guide and lambda = 0)")
    m = (corr - mu * x_bar) / denom
    n = x_bar - m * mu
    return m, n


def guided_coeffs(guide, ms, ratio, radius=DEFAULT_RADIUS, lambda_reg=DEFAULT_LAMBDA,
                  average=True):
    """Low-resolution coefficients, window-averaged, and their ``ratio``x bilinear upsampling."""
    m, n = ridge_coefficients(guide, ms, radius, lambda_reg)
    if average:
        m = ops.box_mean(m, radius)
        n = ops.box_mean(n, radius)
    return GuidedCoeffs(m_l=m, n_l=n, m_h=ops.bilinear_up(m, ratio),
                        n_h=ops.bilinear_up(n, ratio), radius=radius, lambda_reg=lambda_reg)


def degrade_pan(pan, ratio, pan_gain=resample.DEFAULT_PAN_GAIN):
    """PAN at MS resolution through the PAN MTF kernel (fixed, not trained)."""
    taps = resample.mtf_gaussian_kernel(pan_gain, ratio).taps
    return resample.blur_decimate_array(pan, taps, ratio)


def dmg_fuse(net, pan, ms, ratio=4, radius=DEFAULT_RADIUS, lambda_reg=DEFAULT_LAMBDA,
             pan_gain=resample.DEFAULT_PAN_GAIN):
    """Pre-fused image ``m_h * f(pan) + n_h`` at PAN resolution.

    ``pan`` is (N, 1, M, M) and ``ms`` (N, b, m, m), arrays or Tensors with
    ``M = ratio * m``. Returns (F_d, coefficients).
    """
    pan_arr = pan.data if isinstance(pan, Tensor) else np.asarray(pan)
    ms = as_tensor(ms)
    if pan_arr.shape[-1] != ratio * ms.shape[-1] or pan_arr.shape[-2] != ratio * ms.shape[-2]:
        raise ValueError(f"pan {pan_arr.shape[-2:]} is not {ratio} x ms {ms.shape[-2:]}")
    pan_low = degrade_pan(pan_arr, ratio, pan_gain).astype(pan_arr.dtype, copy=False)
    guide_low = net(Tensor(pan_low))
    guide_high = net(pan)
    coeffs = guided_coeffs(guide_low, ms, ratio, radius, lambda_reg)
    fused = coeffs.m_h * guide_high + coeffs.n_h
    return fused, coeffs


def dmg_loss(fused, reference):
    """Mean squared error between the pre-fused image and the reference."""
    return ops.mse(fused, reference)
