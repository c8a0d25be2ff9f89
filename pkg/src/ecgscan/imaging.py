"""Photograph loading, grayscale conversion, straightening and cropping."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import BoundsError, DecodeError, DegenerateImage, DimensionError, InputError


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGB photograph, ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise DimensionError(f"expected (H, W, 3) pixel grid, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError("image has zero width or height")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise InputError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        return type(other) is type(self) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """8-bit luminance image, ``pixels`` has shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise DimensionError(f"expected (H, W) pixel grid, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError("image has zero width or height")
        if px.dtype != np.uint8:
            if px.min() < 0 or px.max() > 255:
                raise InputError("gray values must lie in [0, 255]")
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def __eq__(self, other):
        return type(other) is type(self) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class SkewEstimate:
    angle: float
    confidence: float


@dataclass(frozen=True)
class CropRect:
    x: int
    y: int
    w: int
    h: int

    def translate(self, dx, dy):
        return CropRect(self.x + dx, self.y + dy, self.w, self.h)

    @classmethod
    def parse(cls, text):
        """Parse ``"x,y,w,h"``."""
        try:
            x, y, w, h = (int(v) for v in text.split(","))
        except ValueError as exc:
            raise InputError(f"crop rectangle must be 'x,y,w,h', got {text!r}") from exc
        return cls(x, y, w, h)


def load_image(data):
    """Decode PNG or JPEG bytes into a :class:`RasterImage`.

    16-bit sources are scaled down to 8 bits and any alpha channel is
    composited over a white background.
    """
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.format not in ("PNG", "JPEG"):
                raise DecodeError(f"unsupported image format {im.format!r}")
            im.load()
            return RasterImage(_to_rgb8(im))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"cannot decode image: {exc}") from exc


def read_image(path):
    with open(path, "rb") as fh:
        return load_image(fh.read())


def _to_rgb8(im):
    if im.width < 1 or im.height < 1:
        raise DimensionError("image has zero width or height")
    mode = im.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=np.float64)
        if mode == "I" and arr.max() <= 255:
            gray = arr
        else:
            gray = arr / 257.0
        gray = np.clip(np.floor(gray + 0.5), 0, 255).astype(np.uint8)
        return np.repeat(gray[:, :, None], 3, axis=2)
    if mode in ("RGBA", "LA", "PA") or (mode == "P" and "transparency" in im.info):
        rgba = np.asarray(im.convert("RGBA"), dtype=np.float64)
        alpha = rgba[:, :, 3:4] / 255.0
        rgb = rgba[:, :, :3] * alpha + 255.0 * (1.0 - alpha)
        return np.clip(np.floor(rgb + 0.5), 0, 255).astype(np.uint8)
    return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_png(img):
    """Encode a raster, gray or boolean grid as PNG bytes."""
    px = img.pixels if hasattr(img, "pixels") else np.asarray(img)
    if px.dtype == bool:
        im = Image.fromarray(px.astype(np.uint8) * 255).convert("1")
    else:
        im = Image.fromarray(np.asarray(px, dtype=np.uint8))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def to_grayscale(img):
    """ITU-R BT.601 luma: ``Y = 0.299 R + 0.587 G + 0.114 B``, rounded half up."""
    px = img.pixels.astype(np.int32)
    # weights are exact thousandths, so integer arithmetic rounds exactly
    y = (299 * px[:, :, 0] + 587 * px[:, :, 1] + 114 * px[:, :, 2] + 500) // 1000
    return GrayImage(np.clip(y, 0, 255).astype(np.uint8))


def _block_mean(arr, factor):
    if factor <= 1:
        return arr
    h = arr.shape[0] // factor * factor
    w = arr.shape[1] // factor * factor
    if h == 0 or w == 0:
        return arr
    return arr[:h, :w].reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


class _ProjectionScorer:
    """Variance of the horizontal projection profile for candidate tilt angles."""

    def __init__(self, gray, max_pixels):
        ink = 255.0 - gray.astype(np.float64)
        factor = max(1, math.ceil(math.sqrt(ink.size / max_pixels)))
        ink = _block_mean(ink, factor)
        ink -= ink.mean()
        rows, cols = np.nonzero(np.abs(ink) > 1e-9)
        self.weights = ink[rows, cols]
        h, w = ink.shape
        self.x = cols - (w - 1) / 2.0
        self.y = rows - (h - 1) / 2.0
        half_diag = math.hypot(h, w) / 2.0
        self.offset = half_diag + 1.0
        self.nbins = int(math.ceil(2 * half_diag)) + 3

    def __call__(self, angle):
        theta = math.radians(angle)
        proj = self.y * math.cos(theta) + self.x * math.sin(theta)
        bins = np.floor(proj + self.offset + 0.5).astype(np.intp)
        profile = np.bincount(bins, weights=self.weights, minlength=self.nbins)
        return float(profile.var())


def _angle_grid(lo, hi, step):
    k_lo = math.ceil(lo / step - 1e-9)
    k_hi = math.floor(hi / step + 1e-9)
    return [k * step for k in range(k_lo, k_hi + 1)]


def estimate_skew(img, search_half_range=10.0, step=0.25, max_pixels=600_000):
    """Estimate content tilt by maximising projection-profile variance.

    A coarse pass over the full range is refined on the ``step`` grid around
    the coarse optimum.  Images larger than ``max_pixels`` are block-averaged
    first; a small loss of resolution does not move the optimum.
    """
    if not 0 < search_half_range <= 45:
        raise InputError("search_half_range must be in (0, 45]")
    if not 0 < step <= search_half_range:
        raise InputError("step must be in (0, search_half_range]")

    gray = img.pixels
    if int(gray.max()) == int(gray.min()):
        raise DegenerateImage("image is uniform; no structure to align")
    score = _ProjectionScorer(gray, max_pixels)
    if score.weights.size == 0:
        raise DegenerateImage("image is uniform; no structure to align")

    coarse_mult = max(1, int(round(1.0 / step)))
    coarse_step = coarse_mult * step
    coarse = _angle_grid(-search_half_range, search_half_range, coarse_step)
    if len(coarse) < 3:
        coarse = _angle_grid(-search_half_range, search_half_range, step)
    coarse_scores = np.array([score(a) for a in coarse])
    top = coarse_scores.max()
    if top <= 0 or np.ptp(coarse_scores) <= 1e-9 * top:
        raise DegenerateImage("projection variance is flat across all angles")

    best = coarse[int(np.argmax(coarse_scores))]
    lo = max(-search_half_range, best - coarse_step)
    hi = min(search_half_range, best + coarse_step)
    fine = _angle_grid(lo, hi, step)
    fine_scores = np.array([score(a) for a in fine])
    i = int(np.argmax(fine_scores))
    angle = round(fine[i], 10) + 0.0
    confidence = float(fine_scores[i] / coarse_scores.mean())
    return SkewEstimate(angle=angle, confidence=confidence)


def _rotate_plane(plane, angle, out_shape):
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    h, w = plane.shape
    oh, ow = out_shape
    in_center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    out_center = np.array([(oh - 1) / 2.0, (ow - 1) / 2.0])
    # (row, col) output -> input; positive angle turns content counter-clockwise on screen
    matrix = np.array([[c, s], [-s, c]])
    offset = in_center - matrix @ out_center
    out = ndimage.affine_transform(
        plane.astype(np.float32), matrix, offset=offset, output_shape=out_shape,
        order=1, mode="constant", cval=255.0, prefilter=False,
    )
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def rotate(img, angle):
    """Rotate content by ``angle`` degrees (counter-clockwise) about the centre.

    The canvas grows to hold the rotated content; uncovered area is white.
    """
    if abs(angle) > 45:
        raise InputError("rotation angle must satisfy |angle| <= 45")
    if angle == 0:
        return type(img)(img.pixels.copy())
    theta = math.radians(angle)
    c, s = abs(math.cos(theta)), abs(math.sin(theta))
    h, w = img.height, img.width
    out_shape = (int(math.ceil(h * c + w * s - 1e-9)), int(math.ceil(w * c + h * s - 1e-9)))
    # keep parity so the centre pixel stays on the pixel grid
    out_shape = (out_shape[0] + (out_shape[0] - h) % 2, out_shape[1] + (out_shape[1] - w) % 2)
    px = img.pixels
    if px.ndim == 2:
        return GrayImage(_rotate_plane(px, angle, out_shape))
    planes = [_rotate_plane(px[:, :, k], angle, out_shape) for k in range(3)]
    return RasterImage(np.stack(planes, axis=2))


def crop(img, rect):
    if rect.w < 1 or rect.h < 1 or rect.x < 0 or rect.y < 0:
        raise BoundsError(f"invalid crop rectangle {rect}")
    if rect.x + rect.w > img.width or rect.y + rect.h > img.height:
        raise BoundsError(f"crop rectangle {rect} escapes {img.width}x{img.height} image")
    return type(img)(img.pixels[rect.y:rect.y + rect.h, rect.x:rect.x + rect.w].copy())
