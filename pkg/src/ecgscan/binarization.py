"""Otsu binarisation and line-element artifact removal."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateHistogram, DimensionError, InputError
from .imaging import _frozen


@dataclass(frozen=True, eq=False)
class Histogram256:
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (256,):
            raise InputError("histogram must have exactly 256 bins")
        if (counts < 0).any():
            raise InputError("histogram counts must be non-negative")
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def total(self):
        return int(self.counts.sum())


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """Boolean mask; ``True`` marks ink."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
            raise DimensionError(f"expected non-empty (H, W) mask, got shape {mask.shape}")
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def height(self):
        return self.mask.shape[0]

    @property
    def width(self):
        return self.mask.shape[1]

    # the CLI debug export and encode_png look for ``pixels``
    @property
    def pixels(self):
        return self.mask

    def __eq__(self, other):
        return isinstance(other, BinaryImage) and np.array_equal(self.mask, other.mask)


@dataclass(frozen=True)
class StructuringElement:
    length: int = 4
    angle: float = 0.0

    def __post_init__(self):
        if self.length < 2:
            raise InputError("structuring element length must be >= 2")
        if not 0 <= self.angle < 180:
            raise InputError("structuring element angle must be in [0, 180)")

    def offsets(self):
        """Pixel offsets ``(drow, dcol)`` of the rasterised segment.

        The segment has exactly ``length`` pixels stepped along its major
        axis and is anchored at index ``length // 2``.
        """
        theta = math.radians(self.angle)
        dx, dy = math.cos(theta), -math.sin(theta)
        n = self.length
        pts = []
        if abs(dx) >= abs(dy):
            slope = dy / dx
            for i in range(n):
                pts.append((_round_half_away(i * slope), i))
        else:
            slope = dx / dy
            step = -1 if dy < 0 else 1
            for i in range(n):
                pts.append((step * i, _round_half_away(step * i * slope)))
        ar, ac = pts[n // 2]
        return tuple((r - ar, c - ac) for r, c in pts)


def _round_half_away(v):
    return int(math.floor(abs(v) + 0.5)) * (1 if v >= 0 else -1)


def histogram(img):
    return Histogram256(np.bincount(img.pixels.ravel(), minlength=256))


def otsu_threshold(hist):
    """Gray level maximising between-class variance (class 0 is ``<= t``).

    Scores are compared as exact integer fractions so ties resolve to the
    smallest threshold regardless of floating-point rounding.
    """
    counts = [int(c) for c in hist.counts]
    n = sum(counts)
    if n < 1:
        raise InputError("histogram is empty")
    if sum(1 for c in counts if c) < 2:
        raise DegenerateHistogram("all pixels share one gray level; no threshold separates them")
    s_total = sum(b * c for b, c in enumerate(counts))

    # sigma_B^2 * N^2 = (n1*s0 - n0*s1)^2 / (n0*n1); keep as numerator/denominator
    best_t, best_num, best_den = 0, 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = s_total - s0
        num = (n1 * s0 - n0 * s1) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def binarize(img, threshold):
    if not 0 <= threshold <= 255:
        raise InputError("threshold must be in [0, 255]")
    return BinaryImage(img.pixels <= threshold)


def _shifted(padded, pad, dr, dc, shape):
    h, w = shape
    return padded[pad + dr:pad + dr + h, pad + dc:pad + dc + w]


def opening(mask, offsets):
    """Binary opening of ``mask`` by the element given as pixel offsets."""
    mask = np.asarray(mask, dtype=bool)
    pad = max(max(abs(r), abs(c)) for r, c in offsets)
    shape = mask.shape
    padded = np.pad(mask, pad)
    eroded = np.ones(shape, dtype=bool)
    for dr, dc in offsets:
        eroded &= _shifted(padded, pad, dr, dc, shape)
    padded = np.pad(eroded, pad)
    out = np.zeros(shape, dtype=bool)
    for dr, dc in offsets:
        out |= _shifted(padded, pad, -dr, -dc, shape)
    return out


def line_elements(se_length=4, angle_step=15.0):
    """Distinct rasterised line elements for the angular sweep over [0, 180)."""
    if not 0 < angle_step <= 90:
        raise InputError("angle_step must be in (0, 90]")
    seen = {}
    k = 0
    while k * angle_step < 180 - 1e-9:
        offsets = StructuringElement(se_length, k * angle_step).offsets()
        r0 = min(r for r, _ in offsets)
        c0 = min(c for _, c in offsets)
        # opening is translation invariant, so elements equal up to shift are duplicates
        key = tuple(sorted((r - r0, c - c0) for r, c in offsets))
        seen.setdefault(key, offsets)
        k += 1
    return list(seen.values())


def remove_artifacts(bin_img, se_length=4, angle_step=15.0):
    """Union over the angular sweep of openings by a short line segment.

    Ink survives wherever some sampled orientation of the segment fits
    inside it, so thin strokes of any slope stay while isolated specks go.
    """
    if se_length < 2:
        raise InputError("se_length must be >= 2")
    mask = bin_img.mask
    out = np.zeros(mask.shape, dtype=bool)
    if not mask.any():
        return BinaryImage(out)
    for offsets in line_elements(se_length, angle_step):
        out |= opening(mask, offsets)
    return BinaryImage(out)
