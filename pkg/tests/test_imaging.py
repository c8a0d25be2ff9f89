import io
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from ecgscan.errors import BoundsError, DecodeError, DegenerateImage, DimensionError, InputError
from ecgscan.evaluation import Distortions, SyntheticTraceSpec, render_synthetic_trace
from ecgscan.imaging import (CropRect, GrayImage, RasterImage, crop, encode_png, estimate_skew,
                             load_image, rotate, to_grayscale)

channel = st.integers(0, 255)


def luma_oracle(r, g, b):
    y = Fraction(299 * r + 587 * g + 114 * b, 1000)
    return min(255, max(0, math.floor(y + Fraction(1, 2))))


def _png(arr, mode=None):
    buf = io.BytesIO()
    Image.fromarray(arr, mode).save(buf, format="PNG")
    return buf.getvalue()


def test_load_single_pixel_png():
    img = load_image(_png(np.array([[[10, 20, 30]]], dtype=np.uint8)))
    assert (img.width, img.height) == (1, 1)
    assert img.pixels[0, 0].tolist() == [10, 20, 30]


def test_load_truncated_raises():
    data = _png(np.zeros((8, 8, 3), dtype=np.uint8))
    with pytest.raises(DecodeError):
        load_image(data[: len(data) // 2])
    with pytest.raises(DecodeError):
        load_image(b"not an image")


def test_load_jpeg_gray_is_close():
    buf = io.BytesIO()
    Image.new("RGB", (2, 2), (128, 128, 128)).save(buf, format="JPEG")
    img = load_image(buf.getvalue())
    assert np.abs(img.pixels.astype(int) - 128).max() <= 2


def test_load_alpha_composited_over_white():
    rgba = np.array([[[0, 0, 0, 0], [0, 0, 0, 255]]], dtype=np.uint8)
    img = load_image(_png(rgba, "RGBA"))
    assert img.pixels[0, 0].tolist() == [255, 255, 255]
    assert img.pixels[0, 1].tolist() == [0, 0, 0]


def test_load_16bit_scaled():
    arr = np.array([[0, 65535, 257 * 100]], dtype=np.uint16)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    img = load_image(buf.getvalue())
    assert img.pixels[0, :, 0].tolist() == [0, 255, 100]


def test_raster_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        RasterImage(np.zeros((0, 3, 3), dtype=np.uint8))
    with pytest.raises(InputError):
        RasterImage(np.zeros((3, 3), dtype=np.uint8))


@pytest.mark.parametrize("rgb,expected", [((255, 0, 0), 76), ((0, 255, 0), 150), ((0, 0, 255), 29)])
def test_grayscale_primaries(rgb, expected):
    assert to_grayscale(RasterImage(np.array([[rgb]], dtype=np.uint8))).pixels[0, 0] == expected


def test_grayscale_diagonal_identity():
    v = np.arange(256, dtype=np.uint8)
    img = RasterImage(np.stack([v, v, v], axis=1)[None])
    assert to_grayscale(img).pixels[0].tolist() == list(range(256))


@given(st.lists(st.tuples(channel, channel, channel), min_size=1, max_size=64))
def test_grayscale_matches_exact_oracle(pixels):
    arr = np.array(pixels, dtype=np.uint8)[None]
    got = to_grayscale(RasterImage(arr)).pixels[0]
    want = [luma_oracle(*p) for p in pixels]
    assert got.tolist() == want
    for p, y in zip(pixels, got):
        assert abs(int(y) - (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])) <= 0.5 + 1e-9


@given(st.tuples(channel, channel, channel), st.tuples(channel, channel, channel))
def test_grayscale_monotone(a, b):
    lo = tuple(min(x, y) for x, y in zip(a, b))
    hi = tuple(max(x, y) for x, y in zip(a, b))
    arr = np.array([[lo, hi]], dtype=np.uint8)
    y = to_grayscale(RasterImage(arr)).pixels[0]
    assert y[0] <= y[1]


def _lines_image(h=200, w=400):
    px = np.full((h, w), 255, dtype=np.uint8)
    px[40::30, 20:-20] = 0
    return GrayImage(px)


def test_skew_zero_on_aligned_lines():
    est = estimate_skew(_lines_image(), 10.0, 0.5)
    assert abs(est.angle) <= 0.5
    assert est.confidence >= 1.0


@pytest.mark.parametrize("angle", [3.0, -5.5, 8.0])
def test_skew_recovers_rotation(angle):
    img = rotate(_lines_image(), angle)
    assert abs(estimate_skew(img).angle - angle) <= 0.5


def test_skew_on_synthetic_trace():
    spec = SyntheticTraceSpec(distortions=Distortions(rotation_deg=3.0))
    img, truth = render_synthetic_trace(spec, seed=4)
    est = estimate_skew(to_grayscale(img), 10.0, 0.25)
    assert abs(est.angle - truth.skew_angle) <= 0.5


def test_skew_uniform_is_degenerate():
    with pytest.raises(DegenerateImage):
        estimate_skew(GrayImage(np.full((50, 50), 128, dtype=np.uint8)))


def test_skew_rejects_bad_range():
    with pytest.raises(InputError):
        estimate_skew(_lines_image(), 50.0, 1.0)
    with pytest.raises(InputError):
        estimate_skew(_lines_image(), 5.0, 6.0)


def test_rotate_zero_is_identity():
    img = _lines_image()
    out = rotate(img, 0)
    assert out == img and out.pixels is not img.pixels


def _round_trip_mae(gray, angle):
    back = rotate(rotate(gray, angle), -angle)
    dh = (back.height - gray.height) // 2
    dw = (back.width - gray.width) // 2
    back = back.pixels[dh:dh + gray.height, dw:dw + gray.width]
    h, w = gray.height, gray.width
    region = (slice(h // 4, 3 * h // 4), slice(w // 4, 3 * w // 4))
    return np.abs(back[region].astype(float) - gray.pixels[region].astype(float)).mean()


def test_rotate_round_trip_smooth_content():
    yy, xx = np.mgrid[0:200, 0:300]
    px = 128 + 100 * np.sin(xx / 9.0) * np.cos(yy / 13.0)
    assert _round_trip_mae(GrayImage(px.astype(np.uint8)), 3.0) < 3.0


@pytest.mark.xfail(strict=True, reason="two bilinear passes blur the 1-px grid lines: "
                   "measured MAE is about 6.4 gray levels on this photograph")
def test_rotate_round_trip_grid_photograph():
    img, _ = render_synthetic_trace(SyntheticTraceSpec(), seed=1)
    assert _round_trip_mae(to_grayscale(img), 3.0) < 3.0


@pytest.mark.parametrize("angle", [45.0, -45.0, 17.0])
def test_rotate_center_pixel_fixed(angle):
    px = np.full((21, 21), 255, dtype=np.uint8)
    px[10, 10] = 0
    out = rotate(GrayImage(px), angle).pixels
    assert out[(out.shape[0] - 1) // 2, (out.shape[1] - 1) // 2] == 0


def test_rotate_expands_canvas_with_white():
    out = rotate(GrayImage(np.zeros((10, 30), dtype=np.uint8)), 30.0)
    assert out.height > 10 and out.width > 30
    assert out.pixels[0, 0] == 255 and out.pixels[-1, -1] == 255


def test_rotate_positive_is_counter_clockwise():
    # a dot right of centre should move up when the content turns counter-clockwise
    px = np.full((41, 41), 255, dtype=np.uint8)
    px[20, 35] = 0
    out = rotate(GrayImage(px), 30.0).pixels
    r, c = np.unravel_index(np.argmin(out), out.shape)
    cy = (out.shape[0] - 1) / 2
    assert r < cy - 5


def test_rotate_rejects_large_angle():
    with pytest.raises(InputError):
        rotate(_lines_image(), 90.0)


def test_rotate_rgb_keeps_kind():
    img = RasterImage(np.zeros((10, 12, 3), dtype=np.uint8))
    assert isinstance(rotate(img, 5.0), RasterImage)


def test_crop_examples():
    px = np.arange(9, dtype=np.uint8).reshape(3, 3)
    img = GrayImage(px)
    assert crop(img, CropRect(0, 0, 3, 3)) == img
    assert crop(img, CropRect(1, 1, 1, 1)).pixels.tolist() == [[4]]
    with pytest.raises(BoundsError):
        crop(img, CropRect(0, 0, 4, 3))
    with pytest.raises(BoundsError):
        crop(img, CropRect(-1, 0, 1, 1))


def test_crop_rect_parse():
    assert CropRect.parse("1,2,3,4") == CropRect(1, 2, 3, 4)
    with pytest.raises(InputError):
        CropRect.parse("1,2,3")


@given(st.data())
def test_crop_composition(data):
    h, w = data.draw(st.integers(2, 20)), data.draw(st.integers(2, 20))
    img = GrayImage(np.arange(h * w, dtype=np.uint32).reshape(h, w).astype(np.uint8))
    ax, ay = data.draw(st.integers(0, w - 1)), data.draw(st.integers(0, h - 1))
    aw, ah = data.draw(st.integers(1, w - ax)), data.draw(st.integers(1, h - ay))
    bx, by = data.draw(st.integers(0, aw - 1)), data.draw(st.integers(0, ah - 1))
    bw, bh = data.draw(st.integers(1, aw - bx)), data.draw(st.integers(1, ah - by))
    a, b = CropRect(ax, ay, aw, ah), CropRect(bx, by, bw, bh)
    assert crop(crop(img, a), b) == crop(img, b.translate(ax, ay))


def test_encode_png_round_trip():
    arr = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    assert load_image(encode_png(RasterImage(arr))) == RasterImage(arr)
