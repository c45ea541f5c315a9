import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from psfuse import raster
from psfuse.raster import Raster, RasterError, Sample


def naive_box_mean(x, r):
    """Direct window loop over a reflect-101 padded plane."""
    p = np.pad(x, r, mode="reflect")
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            out[i, j] = p[i:i + 2 * r + 1, j:j + 2 * r + 1].mean()
    return out


def test_raster_is_band_major_and_readonly(rng):
    img = Raster(rng.random((3, 5, 7)))
    assert img.shape == (5, 7, 3)
    assert img.bands == 3 and img.height == 5 and img.width == 7
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_from_hwb_round_trip(rng):
    arr = rng.random((4, 6, 2))
    img = Raster.from_hwb(arr)
    assert img.bands == 2
    np.testing.assert_array_equal(img.to_hwb(), arr)


def test_rejects_non_finite():
    with pytest.raises(RasterError):
        Raster(np.array([[np.nan]]))


def test_sample_checks_ratio(rng):
    pan = Raster(rng.random((1, 8, 8)))
    with pytest.raises(RasterError):
        Sample(pan=pan, ms=Raster(rng.random((4, 3, 3))), ratio=4)
    with pytest.raises(RasterError):
        Sample(pan=Raster(rng.random((2, 8, 8))), ms=Raster(rng.random((4, 2, 2))))
    s = Sample(pan=pan, ms=Raster(rng.random((4, 2, 2))))
    assert s.reference is None


def test_reflect_pad_matches_numpy_reflect(rng):
    img = Raster(rng.random((2, 6, 9)))
    out = raster.reflect_pad(img, 3)
    want = np.pad(img.data, ((0, 0), (3, 3), (3, 3)), mode="reflect")
    np.testing.assert_array_equal(out.data, want)
    with pytest.raises(RasterError):
        raster.reflect_pad(img, 6)


def test_crop_undoes_pad(rng):
    img = Raster(rng.random((1, 7, 7)))
    assert raster.crop(raster.reflect_pad(img, 2), 2) == img


@given(st.integers(1, 3), st.integers(7, 12), st.integers(7, 12), st.integers(0, 2 ** 31))
def test_box_mean_matches_window_loop(r, h, w, seed):
    x = np.random.default_rng(seed).normal(size=(h, w))
    got = raster.box_mean(Raster(x), r).data[0]
    np.testing.assert_allclose(got, naive_box_mean(x, r), atol=1e-12)


def test_box_mean_constant_is_constant():
    out = raster.box_mean(Raster(np.full((2, 9, 9), 0.7)), 2)
    np.testing.assert_allclose(out.data, 0.7, atol=1e-15)


def test_error_map_sums_band_errors():
    a = Raster(np.zeros((2, 2, 2)))
    b = Raster(np.stack([np.full((2, 2), 0.5), np.full((2, 2), -0.25)]))
    np.testing.assert_allclose(raster.error_map(a, b).data, 0.75)


def test_psr_round_trip(tmp_path, rng):
    img = Raster(rng.random((3, 4, 5)).astype(np.float32))
    path = tmp_path / "x.psr"
    raster.write_psr(path, img)
    raw = path.read_bytes()
    assert raw[:4] == b"PSR1"
    assert np.frombuffer(raw[4:16], "<u4").tolist() == [4, 5, 3]
    assert len(raw) == 16 + 4 * 60
    assert raster.read_psr(path) == img


def test_psr_layout_is_planar(tmp_path):
    data = np.arange(2 * 2 * 3, dtype=np.float64).reshape(3, 2, 2)
    path = tmp_path / "p.psr"
    raster.write_psr(path, Raster(data))
    payload = np.frombuffer(path.read_bytes()[16:], "<f4")
    np.testing.assert_array_equal(payload, data.ravel())


def test_psr_rejects_bad_files(tmp_path, rng):
    bad = tmp_path / "bad.psr"
    bad.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(RasterError):
        raster.read_psr(bad)
    short = tmp_path / "short.psr"
    raster.write_psr(short, Raster(rng.random((1, 2, 2))))
    short.write_bytes(short.read_bytes()[:-4])
    with pytest.raises(RasterError):
        raster.read_psr(short)


def test_integer_codes_rescale():
    img = raster.from_integer_codes(np.array([[0, 255]]), 8)
    np.testing.assert_allclose(img.data[0, 0], [0.0, 1.0])


def test_rgb_png_uses_bands_321(tmp_path):
    data = np.zeros((4, 2, 2))
    data[2] = 1.0  # band 3 -> red
    path = tmp_path / "c.png"
    lo, hi = raster.write_rgb_png(path, Raster(data))
    px = np.asarray(Image.open(path))
    assert (lo, hi) == (0.0, 1.0)
    assert px[..., 0].min() == 255 and px[..., 1].max() == 0 and px[..., 2].max() == 0


def test_error_png_writes_scale_sidecar(tmp_path):
    path = tmp_path / "e.png"
    raster.write_error_png(path, Raster(np.array([[0.0, 0.1, 0.2]])), 0.2)
    px = np.asarray(Image.open(path))
    assert px.tolist() == [[0, 128, 255]]
    assert (tmp_path / "e.png.scale.txt").read_text().strip() == "scale=0.2"
