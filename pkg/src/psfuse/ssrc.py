"""Spatial-spectral residual compensation: coarse-to-fine and fine-to-coarse
pyramid generators built from encoder/residual/decoder generator blocks, plus
the fully convolutional discriminators."""

import math

import numpy as np

from .autodiff import ops
from .autodiff.tensor import Param, Tensor, as_tensor
from .raster import Raster

DISC_CHANNELS = (32, 64, 128, 256, 512, 512, 1)
DISC_STRIDES = (1, 2, 2, 2, 2, 1, 1)


def _conv_params(rng, n_out, n_in, k, std, dtype, name):
    return (Param.gaussian((n_out, n_in, k, k), rng, std, dtype, name=f"{name}.w"),
            Param.zeros((n_out,), dtype, name=f"{name}.b"))


def _deconv_params(rng, n_in, n_out, k, std, dtype, name):
    return (Param.gaussian((n_in, n_out, k, k), rng, std, dtype, name=f"{name}.w"),
            Param.zeros((n_out,), dtype, name=f"{name}.b"))


class GeneratorBlock:
    """Stride-2 encoder, residual body, transposed-conv decoder.

    Maps a 2b-channel image to a b-channel detail image of the same size.
    With the default ``depth=3`` the encoder widths are 4, 8, 16.
    """

    def __init__(self, bands=4, n_blocks=6, depth=3, rng=None, std=0.02, dtype=np.float32,
                 prefix="gb"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.bands = bands
        self.depth = depth
        widths = [4 * 2 ** i for i in range(depth)]
        self.encoder = []
        n_in = 2 * bands
        for i, n_out in enumerate(widths):
            self.encoder.append(_conv_params(rng, n_out, n_in, 3, std, dtype, f"{prefix}.enc{i + 1}"))
            n_in = n_out
        body = widths[-1]
        self.body = []
        for x in range(n_blocks):
            self.body.append((
                _conv_params(rng, body, body, 3, std, dtype, f"{prefix}.rb{x + 1}.c1"),
                _conv_params(rng, body, body, 3, std, dtype, f"{prefix}.rb{x + 1}.c2"),
            ))
        dec_widths = [widths[-1]] + widths[::-1][1:-1] + [bands] if depth > 1 else [bands]
        self.decoder = []
        n_in = body
        for i, n_out in enumerate(dec_widths):
            self.decoder.append(_deconv_params(rng, n_in, n_out, 3, std, dtype, f"{prefix}.dec{i + 1}"))
            n_in = n_out

    def parameters(self):
        out = {}
        pairs = list(self.encoder) + [p for rb in self.body for p in rb] + list(self.decoder)
        for w, b in pairs:
            out[w.name] = w
            out[b.name] = b
        return out

    def __call__(self, x):
        x = as_tensor(x)
        step = 2 ** self.depth
        if x.shape[-1] % step or x.shape[-2] % step:
            raise ValueError(f"generator block input {x.shape[-2:]} not divisible by {step}")
        if x.shape[1] != 2 * self.bands:
            raise ValueError(f"generator block expects {2 * self.bands} channels, got {x.shape[1]}")
        for w, b in self.encoder:
            x = ops.relu(ops.conv2d(x, w, b, stride=2, padding="reflect"))
        for (w1, b1), (w2, b2) in self.body:
            h = ops.relu(ops.conv2d(x, w1, b1, padding="reflect"))
            x = x + ops.conv2d(h, w2, b2, padding="reflect")
        for i, (w, b) in enumerate(self.decoder):
            x = ops.deconv2d(x, w, b)
            if i < len(self.decoder) - 1:
                x = ops.relu(x)
        return x


class PyramidGenerator:
    """``scales`` generator blocks, one per pyramid level, in one direction."""

    def __init__(self, direction, scales=2, bands=4, n_blocks=6, depth=3, rng=None, std=0.02,
                 dtype=np.float32, prefix=None):
        if direction not in ("c2f", "f2c"):
            raise ValueError(f"direction must be 'c2f' or 'f2c', got {direction!r}")
        rng = np.random.default_rng(0) if rng is None else rng
        prefix = direction if prefix is None else prefix
        self.direction = direction
        self.scales = scales
        self.blocks = [GeneratorBlock(bands, n_blocks, depth, rng, std, dtype,
                                      prefix=f"{prefix}.g{s + 1}") for s in range(scales)]

    def parameters(self):
        out = {}
        for blk in self.blocks:
            out.update(blk.parameters())
        return out

    def __call__(self, x):
        return c2f_forward(self, x) if self.direction == "c2f" else f2c_forward(self, x)


def scales_for_ratio(ratio):
    scales = int(round(math.log2(ratio)))
    if 2 ** scales != ratio:
        raise ValueError(f"ratio {ratio} is not a power of two")
    return scales


def _detail_step(resampled, guide, block):
    detail = block(ops.concat([resampled, guide], axis=1))
    return ops.scale(resampled + detail, 0.5), detail


def c2f_forward(gen, coarse, return_details=False):
    """Coarse -> fine: each level doubles the size and averages in a learned detail."""
    current = guide = as_tensor(coarse)
    details = []
    for block in gen.blocks:
        guide = ops.pyr_up(guide)
        current, detail = _detail_step(ops.pyr_up(current), guide, block)
        details.append(detail)
    return (current, details) if return_details else current


def f2c_forward(gen, fine, return_details=False):
    """Fine -> coarse: each level halves the size and averages in a learned detail."""
    current = guide = as_tensor(fine)
    details = []
    for block in gen.blocks:
        guide = ops.pyr_down(guide)
        current, detail = _detail_step(ops.pyr_down(current), guide, block)
        details.append(detail)
    return (current, details) if return_details else current


def coarse_of(x, scales=2):
    """Fine image to the coarse domain: ``scales`` binomial blur-and-halve steps."""
    if isinstance(x, Raster):
        arr = x.data
        for _ in range(scales):
            arr = Tensor(arr)
            arr = ops.pyr_down(arr).data
        return Raster(arr)
    x = as_tensor(x)
    for _ in range(scales):
        x = ops.pyr_down(x)
    return x


class Discriminator:
    """Seven 3x3 convs (strides 1,2,2,2,2,1,1), LReLU between, raw 1-channel scores."""

    def __init__(self, bands=4, channels=DISC_CHANNELS, strides=DISC_STRIDES, rng=None,
                 std=0.02, dtype=np.float32, prefix="d"):
        rng = np.random.default_rng(0) if rng is None else rng
        self.strides = tuple(strides)
        self.layers = []
        n_in = bands
        for i, (n_out, s) in enumerate(zip(channels, strides)):
            w, b = _conv_params(rng, n_out, n_in, 3, std, dtype, f"{prefix}.c{i + 1}")
            self.layers.append((w, b, s))
            n_in = n_out

    @property
    def downsampling(self):
        return int(np.prod(self.strides))

    def parameters(self):
        out = {}
        for w, b, _ in self.layers:
            out[w.name] = w
            out[b.name] = b
        return out

    def __call__(self, x):
        x = as_tensor(x)
        f = self.downsampling
        if x.shape[-1] % f or x.shape[-2] % f:
            raise ValueError(f"discriminator input {x.shape[-2:]} not divisible by {f}")
        for i, (w, b, s) in enumerate(self.layers):
            x = ops.conv2d(x, w, b, stride=s, padding="reflect")
            if i < len(self.layers) - 1:
                x = ops.lrelu(x, 0.2)
        return x


def disc_forward(d, x):
    return d(x)


def gb_forward(g, x):
    return g(x)


def refine(gen, fused_external):
    """Post-process any fused product with a trained coarse-to-fine generator."""
    if isinstance(fused_external, Raster):
        dtype = gen.blocks[0].encoder[0][0].dtype
        x = Tensor(fused_external.data[None].astype(dtype))
        out = c2f_forward(gen, coarse_of(x, gen.scales))
        return Raster(out.data[0])
    return c2f_forward(gen, coarse_of(fused_external, gen.scales))
