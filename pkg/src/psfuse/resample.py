"""Fixed resampling: MTF blur + decimation, EXP interpolation, pyramid steps,
bilinear enlargement and reduced-resolution (Wald) degradation."""

import math
from dataclasses import dataclass

import numpy as np

from . import linops
from .raster import Raster, RasterError, Sample

DEFAULT_MS_GAIN = 0.30
DEFAULT_PAN_GAIN = 0.15
MAX_KERNEL_SIZE = 41

# Non-negative half of the 23-tap EXP interpolator (centre tap first). Built as
# sinc(n/2) * hamming(23), even offsets zeroed, odd taps rescaled to sum to 1 so
# the full kernel has gain 2 and reproduces the input on even output samples.
EXP23_HALF = (
    1.0,
    0.6275257478682805,
    0.0,
    -0.1793068022315908,
    0.0,
    0.07743175740985166,
    0.0,
    -0.03187237684835536,
    0.0,
    0.01087215084089269,
    0.0,
    -0.004650477039078705,
)


@dataclass(frozen=True)
class Kernel:
    """Symmetric odd-length separable filter."""

    taps: np.ndarray
    dc_gain: float
    sigma: float = float("nan")

    @property
    def size(self):
        return len(self.taps)


def exp_kernel():
    half = np.array(EXP23_HALF)
    taps = np.concatenate([half[:0:-1], half])
    return Kernel(taps=taps, dc_gain=float(taps.sum()))


def mtf_sigma(nyquist_gain, ratio):
    """Spatial sigma whose Gaussian response at 1/(2*ratio) cycles/pixel is ``nyquist_gain``."""
    if not 0.0 < nyquist_gain < 1.0:
        raise ValueError(f"nyquist gain must lie in (0, 1), got {nyquist_gain}")
    return ratio * math.sqrt(-2.0 * math.log(nyquist_gain)) / math.pi


def kernel_size_for(sigma):
    return min(2 * math.ceil(3.0 * sigma) + 1, MAX_KERNEL_SIZE)


def mtf_gaussian_kernel(nyquist_gain, ratio, size=None):
    sigma = mtf_sigma(nyquist_gain, ratio)
    if size is None:
        size = kernel_size_for(sigma)
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size}")
    half = size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    if sigma > 0:
        taps = np.exp(-0.5 * (offsets / sigma) ** 2)
    else:
        taps = (offsets == 0).astype(np.float64)
    taps /= taps.sum()
    return Kernel(taps=taps, dc_gain=1.0, sigma=sigma)


# ------------------------------------------------------------ array versions
def blur_decimate_array(arr, taps, factor):
    h, w = arr.shape[-2:]
    return linops.apply_separable(arr, linops.decimation_matrix(h, taps, factor),
                                  linops.decimation_matrix(w, taps, factor))


def exp_upsample_array(arr, factor):
    if factor not in (2, 4):
        raise ValueError(f"EXP interpolation supports factors 2 and 4, got {factor}")
    taps = exp_kernel().taps
    out = arr
    for _ in range(int(math.log2(factor))):
        h, w = out.shape[-2:]
        out = linops.apply_separable(out, linops.expansion_matrix(h, taps),
                                     linops.expansion_matrix(w, taps))
    return out


def pyr_d2_array(arr):
    h, w = arr.shape[-2:]
    if h % 2 or w % 2:
        raise RasterError(f"pyr_d2 needs even dimensions, got {h}x{w}")
    return linops.apply_separable(arr, linops.pyr_down_matrix(h), linops.pyr_down_matrix(w))


def pyr_u2_array(arr):
    h, w = arr.shape[-2:]
    return linops.apply_separable(arr, linops.pyr_up_matrix(h), linops.pyr_up_matrix(w))


# ----------------------------------------------------------- raster versions
def blur_decimate(img, kernel, factor):
    if img.height % factor or img.width % factor:
        raise RasterError(f"{img.height}x{img.width} not divisible by {factor}")
    return Raster(blur_decimate_array(img.data, kernel.taps, factor))


def exp_upsample(ms, factor):
    return Raster(exp_upsample_array(ms.data, factor))


def pyr_u2(img):
    return Raster(pyr_u2_array(img.data))


def pyr_d2(img):
    return Raster(pyr_d2_array(img.data))


def bilinear_up(img, factor):
    if factor < 2:
        raise ValueError("bilinear factor must be >= 2")
    mh = linops.bilinear_up_matrix(img.height, factor)
    mw = linops.bilinear_up_matrix(img.width, factor)
    return Raster(linops.apply_separable(img.data, mh, mw))


def wald_degrade(full, ms_gains=None, pan_gain=DEFAULT_PAN_GAIN):
    """Reduced-resolution sample: blur+decimate both inputs, keep the original MS as reference."""
    if full.reference is not None:
        raise RasterError("wald_degrade expects a full-resolution sample without reference")
    r = full.ratio
    if ms_gains is None:
        ms_gains = [DEFAULT_MS_GAIN] * full.ms.bands
    if len(ms_gains) != full.ms.bands:
        raise ValueError(f"need {full.ms.bands} MS gains, got {len(ms_gains)}")
    pan = blur_decimate(full.pan, mtf_gaussian_kernel(pan_gain, r), r)
    if full.ms.height % r or full.ms.width % r:
        raise RasterError(f"ms {full.ms.height}x{full.ms.width} not divisible by {r}")
    bands = [blur_decimate_array(full.ms.data[i], mtf_gaussian_kernel(g, r).taps, r)
             for i, g in enumerate(ms_gains)]
    return Sample(pan=pan, ms=Raster(np.stack(bands)), ratio=r, reference=full.ms)


def dump_kernels_csv(path, ratio=4, ms_gain=DEFAULT_MS_GAIN, pan_gain=DEFAULT_PAN_GAIN):
    """Write every fixed tap table as ``kernel,index,offset,tap`` rows."""
    tables = {
        "mtf_ms": mtf_gaussian_kernel(ms_gain, ratio).taps,
        "mtf_pan": mtf_gaussian_kernel(pan_gain, ratio).taps,
        "exp23": exp_kernel().taps,
        "binomial5": linops.BINOMIAL5,
    }
    lines = ["kernel,index,offset,tap"]
    for name, taps in tables.items():
        half = len(taps) // 2
        for i, t in enumerate(taps):
            lines.append(f"{name},{i},{i - half},{t!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
