"""Raster container, windowed statistics, error maps and on-disk formats.

Rasters hold planar band-major samples: ``data[band, row, col]``.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels, linops

PSR_MAGIC = b"PSR1"


class RasterError(ValueError):
    pass


class Raster:
    """Immutable ``bands x height x width`` grid of finite reals."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise RasterError(f"raster needs (bands, height, width) data, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise RasterError("raster samples must be finite")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_hwb(cls, arr):
        arr = np.asarray(arr)
        if arr.ndim == 2:
            return cls(arr)
        return cls(np.moveaxis(arr, -1, 0))

    @property
    def data(self):
        return self._data

    @property
    def bands(self):
        return self._data.shape[0]

    @property
    def height(self):
        return self._data.shape[1]

    @property
    def width(self):
        return self._data.shape[2]

    @property
    def shape(self):
        return (self.height, self.width, self.bands)

    def band(self, i):
        return self._data[i]

    def to_hwb(self):
        return np.moveaxis(self._data, 0, -1)

    def __eq__(self, other):
        return isinstance(other, Raster) and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self._data.shape, self._data.tobytes()))

    def __repr__(self):
        return f"Raster({self.height}x{self.width}x{self.bands})"


@dataclass(frozen=True)
class Sample:
    pan: Raster
    ms: Raster
    ratio: int = 4
    reference: Raster = None

    def __post_init__(self):
        if self.pan.bands != 1:
            raise RasterError(f"pan must have 1 band, got {self.pan.bands}")
        if self.pan.height != self.ratio * self.ms.height or \
                self.pan.width != self.ratio * self.ms.width:
            raise RasterError(
                f"pan {self.pan.height}x{self.pan.width} is not {self.ratio} x "
                f"ms {self.ms.height}x{self.ms.width}")
        if self.reference is not None and self.reference.shape != (
                self.pan.height, self.pan.width, self.ms.bands):
            raise RasterError(f"reference shape {self.reference.shape} does not match "
                              f"({self.pan.height}, {self.pan.width}, {self.ms.bands})")


# ------------------------------------------------------------------ windows
def reflect_pad(img, margin):
    """Mirror each edge by ``margin`` samples without repeating the edge sample."""
    if margin < 0 or margin >= min(img.height, img.width):
        raise RasterError(f"margin {margin} must be below min(height, width) = "
                          f"{min(img.height, img.width)}")
    rows = linops.reflect_index(img.height, margin, margin)
    cols = linops.reflect_index(img.width, margin, margin)
    return Raster(img.data[:, rows][:, :, cols])


def crop(img, margin):
    if margin == 0:
        return img
    return Raster(img.data[:, margin:-margin, margin:-margin])


def box_mean(img, radius):
    """Per-band mean over the (2r+1)^2 window around every pixel."""
    if radius < 1:
        raise RasterError("radius must be >= 1")
    k = 2 * radius + 1
    padded = reflect_pad(img, radius)
    return Raster(kernels.box_sum(padded.data, radius) / (k * k))


def error_map(a, b):
    """Single-band map of the absolute error summed over bands."""
    if a.shape != b.shape:
        raise RasterError(f"shape mismatch {a.shape} vs {b.shape}")
    return Raster(np.abs(a.data - b.data).sum(axis=0))


# --------------------------------------------------------------------- PSR1
def write_psr(path, img):
    h, w, b = img.height, img.width, img.bands
    payload = img.data.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(PSR_MAGIC)
        fh.write(struct.pack("<III", h, w, b))
        fh.write(payload)


def read_psr(path):
    raw = Path(path).read_bytes()
    if raw[:4] != PSR_MAGIC:
        raise RasterError(f"{path}: not a PSR1 raster")
    h, w, b = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * b
    if len(raw) != expected:
        raise RasterError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=16).reshape(b, h, w)
    return Raster(data.astype(np.float64))


def from_integer_codes(codes, bits):
    """Rescale 8/16-bit sensor codes to [0, 1] by the maximum code value."""
    return Raster(np.asarray(codes, dtype=np.float64) / float(2 ** bits - 1))


# ---------------------------------------------------------------------- PNG
def stretch(values, lo=None, hi=None):
    """Min-max stretch to 8 bits; returns the image and the (lo, hi) used."""
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((values - lo) / span, 0.0, 1.0)
    return np.round(scaled * 255.0).astype(np.uint8), (lo, hi)


def write_rgb_png(path, img, bands=(3, 2, 1)):
    """8-bit composite of the given 1-based bands (R, G, B); returns the stretch used."""
    from PIL import Image

    if max(bands) > img.bands:
        bands = tuple(min(b, img.bands) for b in bands)
    rgb = np.stack([img.data[b - 1] for b in bands], axis=-1)
    pixels, limits = stretch(rgb)
    Image.fromarray(pixels, mode="RGB").save(path)
    return limits


def write_error_png(path, emap, scale):
    """Grayscale error map with value ``scale`` mapped to white; scale goes to a sidecar."""
    from PIL import Image

    pixels, _ = stretch(emap.data[0], 0.0, scale)
    Image.fromarray(pixels, mode="L").save(path)
    Path(str(path) + ".scale.txt").write_text(f"scale={scale!r}\n")
