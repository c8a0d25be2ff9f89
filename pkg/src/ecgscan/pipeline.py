"""End-to-end digitisation: photograph in, calibrated millivolt signal out."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from . import binarization, extraction, imaging
from .analysis import FilterSpec, PanTompkinsConfig
from .errors import DegenerateHistogram, DegenerateImage, InputError
from .extraction import CalibrationParams
from .imaging import CropRect

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    deskew: bool = True
    skew_half_range: float = 10.0
    skew_step: float = 0.25
    crop: CropRect | None = None
    threshold: int | None = None
    se_length: int = 4
    angle_step: float = 15.0
    gap_strategy: str = "repeat_previous"
    trim_margins: bool = True
    trace_height_px: float | None = None
    physical_height_cm: float = 3.5
    gain_mm_per_mV: float = 10.0
    paper_speed_mm_per_s: float = 25.0
    baseline_row_px: float | None = None
    lead_label: str = "II"
    filter_chain: list | None = None
    pan_tompkins: PanTompkinsConfig = field(default_factory=PanTompkinsConfig)

    def validate(self):
        if not 0 < self.skew_half_range <= 45:
            raise InputError("skew_half_range must be in (0, 45]")
        if not 0 < self.skew_step <= self.skew_half_range:
            raise InputError("skew_step must be in (0, skew_half_range]")
        if self.threshold is not None and not 0 <= self.threshold <= 255:
            raise InputError("threshold must be in [0, 255]")
        if self.se_length < 2:
            raise InputError("se_length must be >= 2")
        if not 0 < self.angle_step <= 90:
            raise InputError("angle_step must be in (0, 90]")
        if self.gap_strategy not in extraction.GAP_STRATEGIES:
            raise InputError(f"gap_strategy must be one of {extraction.GAP_STRATEGIES}")
        if self.trace_height_px is not None:
            self.calibration(self.trace_height_px)
        return self

    def calibration(self, trace_height_px):
        return CalibrationParams(
            trace_height_px=trace_height_px,
            physical_height_cm=self.physical_height_cm,
            gain_mm_per_mV=self.gain_mm_per_mV,
            paper_speed_mm_per_s=self.paper_speed_mm_per_s,
            baseline_row_px=self.baseline_row_px,
        )

    @classmethod
    def from_dict(cls, obj):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(obj)
        if kwargs.get("crop") is not None:
            c = kwargs["crop"]
            kwargs["crop"] = CropRect(**c) if isinstance(c, dict) else CropRect.parse(c)
        if kwargs.get("filter_chain") is not None:
            kwargs["filter_chain"] = [FilterSpec.from_dict(f) for f in kwargs["filter_chain"]]
        if isinstance(kwargs.get("pan_tompkins"), dict):
            kwargs["pan_tompkins"] = PanTompkinsConfig(**kwargs["pan_tompkins"])
        try:
            return cls(**kwargs).validate()
        except TypeError as exc:
            raise InputError(str(exc)) from exc


@dataclass
class DigitizeResult:
    signal: extraction.CalibratedSignal
    trace: extraction.PixelTrace
    skew_angle: float
    threshold: int
    column_offset: int
    gray: imaging.GrayImage
    mask: binarization.BinaryImage


def _threshold_for(gray, config):
    if config.threshold is not None:
        return int(config.threshold)
    hist = binarization.histogram(gray)
    try:
        return binarization.otsu_threshold(hist)
    except DegenerateHistogram:
        level = int(np.flatnonzero(hist.counts)[0])
        if level > 127:
            # a single bright level is blank paper: nothing is ink
            return level - 1
        raise


def digitize(image, config=None, source_id=""):
    """Run grayscale, deskew, crop, Otsu, artifact removal, envelope
    extraction and calibration on one photograph."""
    config = (config or PipelineConfig()).validate()
    gray = imaging.to_grayscale(image)

    angle = 0.0
    if config.deskew:
        try:
            angle = imaging.estimate_skew(gray, config.skew_half_range, config.skew_step).angle
        except DegenerateImage:
            log.info("deskew skipped: image has no structure")
        if angle != 0.0:
            gray = imaging.rotate(gray, -angle)
    if config.crop is not None:
        gray = imaging.crop(gray, config.crop)

    threshold = _threshold_for(gray, config)
    mask = binarization.binarize(gray, threshold)
    mask = binarization.remove_artifacts(mask, config.se_length, config.angle_step)
    top, bottom = extraction.extract_envelopes(mask)
    offset = 0
    if config.trim_margins:
        top, bottom, offset = extraction.trim_gap_margins(top, bottom)
    top = extraction.fill_gaps(top, config.gap_strategy)
    bottom = extraction.fill_gaps(bottom, config.gap_strategy)
    trace = extraction.average_envelopes(top, bottom, height=gray.height)
    height = config.trace_height_px if config.trace_height_px is not None else gray.height
    signal = extraction.calibrate(trace, config.calibration(height), config.lead_label, source_id)
    return DigitizeResult(signal, trace, angle, threshold, offset, gray, mask)


def render_overlay(image, result, config=None):
    """Draw the extracted trace in red over the straightened, cropped photograph."""
    config = config or PipelineConfig()
    rgb = image
    if result.skew_angle != 0.0:
        rgb = imaging.rotate(rgb, -result.skew_angle)
    if config.crop is not None:
        rgb = imaging.crop(rgb, config.crop)
    canvas = Image.fromarray(np.asarray(rgb.pixels))
    draw = ImageDraw.Draw(canvas)
    cols = np.arange(result.trace.width) + result.column_offset
    points = list(zip(cols.tolist(), result.trace.samples.tolist()))
    if len(points) > 1:
        draw.line(points, fill=(255, 0, 0), width=max(1, canvas.height // 300))
    return imaging.RasterImage(np.asarray(canvas))

