"""Fusion quality indexes.

Full reference: SAM, ERGAS, UIQI and its four-band quaternion extension Q4.
No reference: D_lambda, D_s and QNR. Ideal values are 0 for SAM, ERGAS,
D_lambda and D_s, and 1 for Q4 and QNR.
"""

import csv
import hashlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import resample
from .raster import RasterError

DEFAULT_WINDOW = 32


class SingularBandError(ArithmeticError):
    """A reference band with zero mean makes ERGAS undefined."""


def _check_pair(a, b):
    if a.shape != b.shape:
        raise RasterError(f"shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------------- SAM
def sam_details(fused, ref):
    """(mean angle in degrees, number of pixels with a zero spectral vector).

    Zero-vector pixels contribute an angle of 0 but still count in the mean.
    """
    _check_pair(fused, ref)
    if fused.bands < 2:
        raise RasterError("SAM needs at least 2 bands")
    v, w = fused.data, ref.data
    nv = np.sqrt(np.sum(v * v, axis=0))
    nw = np.sqrt(np.sum(w * w, axis=0))
    zero = (nv == 0) | (nw == 0)
    safe_v = np.where(zero, 1.0, nv)
    safe_w = np.where(zero, 1.0, nw)
    u1, u2 = v / safe_v, w / safe_w
    # half-angle form stays exact for identical vectors, unlike arccos near 1
    angles = 2.0 * np.arctan2(np.sqrt(np.sum((u1 - u2) ** 2, axis=0)),
                              np.sqrt(np.sum((u1 + u2) ** 2, axis=0)))
    angles[zero] = 0.0
    return float(np.degrees(angles).mean()), int(zero.sum())


def sam(fused, ref):
    return sam_details(fused, ref)[0]


# --------------------------------------------------------------------- ERGAS
def ergas(fused, ref, ratio=4):
    _check_pair(fused, ref)
    mu = ref.data.mean(axis=(1, 2))
    if np.any(mu == 0):
        raise SingularBandError("reference band with zero mean")
    rmse = np.sqrt(np.mean((fused.data - ref.data) ** 2, axis=(1, 2)))
    return float(100.0 / ratio * np.sqrt(np.mean((rmse / mu) ** 2)))


# ------------------------------------------------------------ window moments
def _window_means(x, k):
    """Means of every k x k window (stride 1) over the last two axes, float64."""
    sat = np.zeros(x.shape[:-2] + (x.shape[-2] + 1, x.shape[-1] + 1))
    np.cumsum(np.cumsum(x, axis=-2), axis=-1, out=sat[..., 1:, 1:])
    s = sat[..., k:, k:] - sat[..., :-k, k:] - sat[..., k:, :-k] + sat[..., :-k, :-k]
    return s / (k * k)


def _window(size_h, size_w, window):
    return min(window, size_h, size_w)


def uiqi_map(x, y, window=DEFAULT_WINDOW):
    """Per-window universal quality index of two 2-D arrays; NaN where undefined."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise RasterError(f"shape mismatch {x.shape} vs {y.shape}")
    k = _window(*x.shape, window)
    mx, my = _window_means(x, k), _window_means(y, k)
    # second moments on globally centred data; means stay uncentred
    xc, yc = x - x.mean(), y - y.mean()
    mxc, myc = mx - x.mean(), my - y.mean()
    vx = _window_means(xc * xc, k) - mxc * mxc
    vy = _window_means(yc * yc, k) - myc * myc
    cxy = _window_means(xc * yc, k) - mxc * myc
    den = (vx + vy) * (mx * mx + my * my)
    out = np.full(den.shape, np.nan)
    ok = den != 0
    out[ok] = 4.0 * cxy[ok] * mx[ok] * my[ok] / den[ok]
    return out


def uiqi_details(x, y, window=DEFAULT_WINDOW):
    """(mean index over windows with nonzero denominator, skipped window count)."""
    q = uiqi_map(x, y, window)
    ok = ~np.isnan(q)
    if not ok.any():
        return float("nan"), int(q.size)
    return float(q[ok].mean()), int(q.size - ok.sum())


def uiqi(x, y, window=DEFAULT_WINDOW):
    return uiqi_details(x, y, window)[0]


# ------------------------------------------------------------------------ Q4
# Hamilton product p * conj(q): component -> [(i, j, sign)] over p_i * q_j
_CONJ_PRODUCT = (
    ((0, 0, 1), (1, 1, 1), (2, 2, 1), (3, 3, 1)),
    ((1, 0, 1), (0, 1, -1), (3, 2, 1), (2, 3, -1)),
    ((2, 0, 1), (0, 2, -1), (1, 3, 1), (3, 1, -1)),
    ((3, 0, 1), (0, 3, -1), (2, 1, 1), (1, 2, -1)),
)


def quaternion_conj_product(p, q):
    """p * conj(q) for quaternions stored along axis 0."""
    return np.stack([sum(s * p[i] * q[j] for i, j, s in comp) for comp in _CONJ_PRODUCT])


def q4_map(fused, ref, window=DEFAULT_WINDOW):
    """Per-window quaternion quality index; NaN where the denominator vanishes."""
    _check_pair(fused, ref)
    if fused.bands != 4:
        raise RasterError(f"Q4 needs exactly 4 bands, got {fused.bands}")
    z, v = fused.data, ref.data
    k = _window(fused.height, fused.width, window)
    zc = z - z.mean(axis=(1, 2), keepdims=True)
    vc = v - v.mean(axis=(1, 2), keepdims=True)
    mz, mv = _window_means(z, k), _window_means(v, k)
    mzc = mz - z.mean(axis=(1, 2))[:, None, None]
    mvc = mv - v.mean(axis=(1, 2))[:, None, None]
    cross = _window_means(np.stack([zc[i] * vc[j] for i in range(4) for j in range(4)]), k)
    cross = cross.reshape((4, 4) + cross.shape[1:])
    # E[z conj(v)] - mean(z) conj(mean(v)), component-wise over the 16 products
    cov = np.stack([sum(s * (cross[i, j] - mzc[i] * mvc[j]) for i, j, s in comp)
                    for comp in _CONJ_PRODUCT])
    var_z = np.sum(_window_means(zc * zc, k) - mzc * mzc, axis=0)
    var_v = np.sum(_window_means(vc * vc, k) - mvc * mvc, axis=0)
    mod_cov = np.sqrt(np.sum(cov * cov, axis=0))
    nz, nv = np.sum(mz * mz, axis=0), np.sum(mv * mv, axis=0)
    den = (var_z + var_v) * (nz + nv)
    out = np.full(den.shape, np.nan)
    ok = den != 0
    out[ok] = 4.0 * mod_cov[ok] * np.sqrt(nz[ok]) * np.sqrt(nv[ok]) / den[ok]
    return out


def q4_details(fused, ref, window=DEFAULT_WINDOW):
    q = q4_map(fused, ref, window)
    ok = ~np.isnan(q)
    if not ok.any():
        return float("nan"), int(q.size)
    return float(q[ok].mean()), int(q.size - ok.sum())


def q4(fused, ref, window=DEFAULT_WINDOW):
    return q4_details(fused, ref, window)[0]


# ------------------------------------------------------------- no reference
def _pan_low(pan, ratio, pan_gain):
    return resample.blur_decimate(pan, resample.mtf_gaussian_kernel(pan_gain, ratio), ratio)


def d_lambda(fused, ms, window=DEFAULT_WINDOW):
    b = fused.bands
    if ms.bands != b:
        raise RasterError(f"band count mismatch {fused.bands} vs {ms.bands}")
    total = 0.0
    for i in range(b):
        for j in range(b):
            if i != j:
                total += abs(uiqi(fused.data[i], fused.data[j], window)
                             - uiqi(ms.data[i], ms.data[j], window))
    return total / (b * (b - 1))


def d_s(fused, ms, pan, pan_low, window=DEFAULT_WINDOW):
    total = 0.0
    for i in range(fused.bands):
        total += abs(uiqi(fused.data[i], pan.data[0], window)
                     - uiqi(ms.data[i], pan_low.data[0], window))
    return total / fused.bands


def qnr_suite(fused, ms, pan, pan_low=None, window=DEFAULT_WINDOW, ratio=4,
              pan_gain=resample.DEFAULT_PAN_GAIN):
    """(D_lambda, D_s, QNR) with unit exponents; every Q at its native pair scale."""
    if fused.height != pan.height or fused.width != pan.width:
        raise RasterError(f"fused {fused.height}x{fused.width} does not match pan "
                          f"{pan.height}x{pan.width}")
    if ms.height * ratio != pan.height or ms.width * ratio != pan.width:
        raise RasterError(f"ms {ms.height}x{ms.width} is not pan / {ratio}")
    if pan_low is None:
        pan_low = _pan_low(pan, ratio, pan_gain)
    if (pan_low.height, pan_low.width) != (ms.height, ms.width):
        raise RasterError("pan_low must match the MS grid")
    dl = d_lambda(fused, ms, window)
    ds = d_s(fused, ms, pan, pan_low, window)
    return dl, ds, qnr_from(dl, ds)


def qnr_from(dl, ds):
    return (1.0 - dl) * (1.0 - ds)


# -------------------------------------------------------------------- report
@dataclass
class MetricReport:
    sample: str
    method: str
    q4: float = float("nan")
    sam_deg: float = float("nan")
    ergas: float = float("nan")
    d_lambda: float = float("nan")
    d_s: float = float("nan")
    qnr: float = float("nan")
    dataset: str = ""
    config_hash: str = ""
    sam_zero_vectors: int = field(default=0)
    q4_skipped_windows: int = field(default=0)


def reduced_report(fused, ref, sample, method, ratio=4, window=DEFAULT_WINDOW, dataset="",
                   config_hash=""):
    angle, zeros = sam_details(fused, ref)
    q, skipped = q4_details(fused, ref, window)
    return MetricReport(sample=sample, method=method, q4=q, sam_deg=angle,
                        ergas=ergas(fused, ref, ratio), dataset=dataset,
                        config_hash=config_hash, sam_zero_vectors=zeros,
                        q4_skipped_windows=skipped)


def full_report(fused, ms, pan, sample, method, ratio=4, window=DEFAULT_WINDOW, dataset="",
                config_hash=""):
    dl, ds, q = qnr_suite(fused, ms, pan, window=window, ratio=ratio)
    return MetricReport(sample=sample, method=method, d_lambda=dl, d_s=ds, qnr=q,
                        dataset=dataset, config_hash=config_hash)


_METRIC_FIELDS = ("q4", "sam_deg", "ergas", "d_lambda", "d_s", "qnr")


def mean_by_method(reports):
    """{method: {metric: mean over samples}} in first-seen method order."""
    grouped = {}
    for rep in reports:
        grouped.setdefault(rep.method, []).append(rep)
    return {m: {k: float(np.mean([getattr(r, k) for r in reps])) for k in _METRIC_FIELDS}
            for m, reps in grouped.items()}


def write_reports(path, reports):
    """One row per (sample, method); totals of the degenerate counts go in a footer."""
    names = [f.name for f in fields(MetricReport)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for rep in reports:
            row = asdict(rep)
            writer.writerow([repr(row[n]) if isinstance(row[n], float) else row[n]
                             for n in names])
        zeros = sum(r.sam_zero_vectors for r in reports)
        skipped = sum(r.q4_skipped_windows for r in reports)
        fh.write(f"# sam_zero_vectors={zeros} q4_skipped_windows={skipped}\n")


def read_reports(path):
    out = []
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    for row in csv.DictReader(rows):
        kwargs = {}
        for f in fields(MetricReport):
            val = row[f.name]
            kwargs[f.name] = f.type(val) if f.type in (int, float) else val
        out.append(MetricReport(**kwargs))
    return out


def config_hash(text):
    return hashlib.sha256(text.encode()).hexdigest()[:16]


__all__ = ["sam", "sam_details", "ergas", "uiqi", "uiqi_details", "uiqi_map", "q4",
           "q4_details", "q4_map", "d_lambda", "d_s", "qnr_suite", "qnr_from", "MetricReport",
           "reduced_report", "full_report", "mean_by_method", "write_reports", "read_reports",
           "config_hash", "SingularBandError"]
