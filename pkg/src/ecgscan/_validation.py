"""Input coercion shared by the estimator wrappers."""

from __future__ import annotations

import os

import numpy as np

from .errors import InputError
from .extraction import CalibratedSignal
from .imaging import GrayImage, RasterImage, load_image, read_image


def check_image(obj):
    """Coerce a path, encoded bytes or pixel array to a :class:`RasterImage`."""
    if isinstance(obj, RasterImage):
        return obj
    if isinstance(obj, GrayImage):
        return RasterImage(np.repeat(obj.pixels[:, :, None], 3, axis=2))
    if isinstance(obj, (bytes, bytearray)):
        return load_image(bytes(obj))
    if isinstance(obj, (str, os.PathLike)):
        return read_image(obj)
    arr = np.asarray(obj)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    return RasterImage(arr)


def check_images(X):
    if isinstance(X, (RasterImage, GrayImage, bytes, bytearray, str, os.PathLike)):
        X = [X]
    elif isinstance(X, np.ndarray) and X.ndim in (2, 3) and (X.ndim == 2 or X.shape[-1] == 3):
        X = [X]
    images = [check_image(x) for x in X]
    if not images:
        raise InputError("no images given")
    return images


def check_signals(X):
    if isinstance(X, CalibratedSignal):
        X = [X]
    signals = list(X)
    for s in signals:
        if not isinstance(s, CalibratedSignal):
            raise InputError(f"expected CalibratedSignal, got {type(s).__name__}")
    return signals
