"""Seeded synthetic scenes with known spectral structure.

Each scene is a full-resolution (PAN, MS) pair. High-resolution MS bands mix
smooth random fields with geometric primitives whose albedos are correlated
across bands. PAN is a convex combination of those bands plus extra
high-frequency texture that MS never sees, and MS is the MTF-blurred,
decimated high-resolution stack.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import raster, resample
from .raster import Raster, RasterError, Sample

DEFAULT_PAN_WEIGHTS = (0.1, 0.3, 0.3, 0.3)


@dataclass(frozen=True)
class SceneSpec:
    size: int = 256
    bands: int = 4
    ratio: int = 4
    seed: int = 0
    rectangles: int = 12
    ellipses: int = 8
    gradients: int = 2
    octaves: int = 4
    pan_weights: tuple = DEFAULT_PAN_WEIGHTS
    detail_gain: float = 0.05

    def __post_init__(self):
        if self.size % 32:
            raise RasterError(f"scene size {self.size} must be divisible by 32")
        if self.size % self.ratio:
            raise RasterError(f"scene size {self.size} not divisible by ratio {self.ratio}")
        if len(self.pan_weights) != self.bands:
            raise ValueError(f"need {self.bands} pan weights, got {len(self.pan_weights)}")
        w = np.asarray(self.pan_weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("pan weights must be nonnegative and sum to 1")
        if self.detail_gain < 0:
            raise ValueError("detail gain must be nonnegative")


def _smooth_field(rng, size, octaves, base=4):
    """Sum of bilinearly enlarged random grids, finest octave weakest."""
    out = np.zeros((size, size))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = base * 2 ** o
        if cells > size:
            break
        grid = rng.random((cells + 1, cells + 1))
        pos = np.linspace(0, cells, size)
        i0 = np.minimum(pos.astype(int), cells - 1)
        t = pos - i0
        rows = grid[i0] * (1 - t)[:, None] + grid[i0 + 1] * t[:, None]
        out += amp * (rows[:, i0] * (1 - t) + rows[:, i0 + 1] * t)
        total += amp
        amp *= 0.5
    return out / total


def _albedo(rng, base, bands):
    """Band vector correlated with ``base``: shared brightness, small spectral tilt."""
    tilt = rng.normal(0.0, 0.12, size=bands)
    return np.clip(base + tilt, 0.02, 0.98)


def _paint_primitives(rng, spec, ms):
    size, b = spec.size, spec.bands
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(spec.rectangles):
        h, w = rng.integers(size // 16, size // 4, size=2)
        y0, x0 = rng.integers(0, size - h), rng.integers(0, size - w)
        ms[:, y0:y0 + h, x0:x0 + w] = _albedo(rng, rng.random(), b)[:, None, None]
    for _ in range(spec.ellipses):
        cy, cx = rng.random(2) * size
        ry, rx = rng.uniform(size / 32, size / 8, size=2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        ms[:, inside] = _albedo(rng, rng.random(), b)[:, None]
    for _ in range(spec.gradients):
        angle = rng.uniform(0, 2 * np.pi)
        ramp = (np.cos(angle) * xx + np.sin(angle) * yy) / size
        ramp -= ramp.min()
        ramp /= max(ramp.max(), 1e-12)
        gains = rng.uniform(-0.15, 0.15) * (1 + rng.normal(0, 0.2, size=b))
        ms += gains[:, None, None] * (ramp - 0.5)
    return ms


def _texture(rng, size):
    """Zero-mean high-frequency texture: fine noise minus its local mean."""
    noise = _smooth_field(rng, size, 1, base=size // 2)
    fine = rng.normal(0.0, 0.5, size=(size, size))
    tex = noise + fine
    local = raster.box_mean(Raster(tex), 1).data[0]
    return tex - local


def generate_high_res(spec):
    """(b, M, M) high-resolution MS stack and the (M, M) PAN, both in [0, 1]."""
    rng = np.random.default_rng(spec.seed)
    size, b = spec.size, spec.bands
    shared = _smooth_field(rng, size, spec.octaves)
    ms = np.empty((b, size, size))
    for i in range(b):
        own = _smooth_field(rng, size, spec.octaves)
        ms[i] = 0.2 + 0.5 * (0.7 * shared + 0.3 * own)
    ms = np.clip(_paint_primitives(rng, spec, ms), 0.0, 1.0)
    weights = np.asarray(spec.pan_weights)
    pan = np.tensordot(weights, ms, axes=1)
    if spec.detail_gain:
        pan = pan + spec.detail_gain * _texture(rng, size)
    return ms, np.clip(pan, 0.0, 1.0)


def generate_scene(spec, ms_gain=resample.DEFAULT_MS_GAIN):
    """Full-resolution sample: PAN at M, MS at M / r."""
    ms_high, pan = generate_high_res(spec)
    taps = resample.mtf_gaussian_kernel(ms_gain, spec.ratio).taps
    ms = np.clip(resample.blur_decimate_array(ms_high, taps, spec.ratio), 0.0, 1.0)
    return Sample(pan=Raster(pan), ms=Raster(ms), ratio=spec.ratio)


def write_dataset(out_dir, n_train=200, n_test=20, seed=0, size=256, **spec_kw):
    """Write ``scenes/{id}/pan.psr`` and ``ms.psr`` plus ``manifest.csv``.

    Scene ``i`` uses seed ``seed + i``; the first ``n_train`` are training
    scenes, the rest test scenes.
    """
    out = Path(out_dir)
    rows = []
    for i in range(n_train + n_test):
        scene_id = f"s{i:04d}"
        spec = SceneSpec(size=size, seed=seed + i, **spec_kw)
        sample = generate_scene(spec)
        folder = out / "scenes" / scene_id
        folder.mkdir(parents=True, exist_ok=True)
        raster.write_psr(folder / "pan.psr", sample.pan)
        raster.write_psr(folder / "ms.psr", sample.ms)
        rows.append((scene_id, seed + i, "train" if i < n_train else "test"))
    with open(out / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "seed", "split"])
        writer.writerows(rows)
    return rows


def read_manifest(data_dir):
    with open(Path(data_dir) / "manifest.csv", newline="") as fh:
        return [(r["id"], int(r["seed"]), r["split"]) for r in csv.DictReader(fh)]


def load_scene(data_dir, scene_id, ratio=4):
    folder = Path(data_dir) / "scenes" / scene_id
    return Sample(pan=raster.read_psr(folder / "pan.psr"),
                  ms=raster.read_psr(folder / "ms.psr"), ratio=ratio)
