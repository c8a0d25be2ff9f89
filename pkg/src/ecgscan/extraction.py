"""Envelope-based curve extraction and pixel-to-millivolt calibration."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AllGaps, EmptyMask, InputError, InvalidParams, SchemaError, WidthMismatch
from .imaging import _frozen

SIGNAL_SCHEMA_VERSION = 1
# serialised samples are rounded to 1 microvolt, finer than a pixel at any practical scan resolution
SAMPLE_DECIMALS = 3
GAP_STRATEGIES = ("repeat_previous", "linear_interpolate")


@dataclass(frozen=True, eq=False)
class Envelope:
    """Per-column row coordinate; ``NaN`` where ``gap_mask`` is set."""

    values: np.ndarray
    gap_mask: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        gaps = np.asarray(self.gap_mask, dtype=bool)
        if values.shape != gaps.shape or values.ndim != 1:
            raise InputError("envelope values and gap mask must be 1-D and equal length")
        values = np.where(gaps, np.nan, values)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "gap_mask", _frozen(gaps))

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        return (isinstance(other, Envelope)
                and np.array_equal(self.gap_mask, other.gap_mask)
                and np.array_equal(self.values, other.values, equal_nan=True))


@dataclass(frozen=True, eq=False)
class PixelTrace:
    samples: np.ndarray
    height: int | None = None

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InputError("pixel trace must be a non-empty 1-D array")
        if not np.isfinite(samples).all():
            raise InputError("pixel trace contains gaps")
        if self.height is not None and (samples.min() < 0 or samples.max() >= self.height):
            raise InputError("pixel trace rows must lie inside the image")
        object.__setattr__(self, "samples", _frozen(samples))

    @property
    def width(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class CalibrationParams:
    trace_height_px: float
    physical_height_cm: float = 3.5
    gain_mm_per_mV: float = 10.0
    paper_speed_mm_per_s: float = 25.0
    baseline_row_px: float | None = None

    def __post_init__(self):
        for name in ("trace_height_px", "physical_height_cm", "gain_mm_per_mV", "paper_speed_mm_per_s"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v > 0):
                raise InvalidParams(f"{name} must be a positive number, got {v!r}")
        if self.baseline_row_px is not None and not (
            np.isfinite(self.baseline_row_px) and self.baseline_row_px >= 0
        ):
            raise InvalidParams("baseline_row_px must be a non-negative row index")

    @property
    def mm_per_px(self):
        return self.physical_height_cm * 10.0 / self.trace_height_px

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class CalibratedSignal:
    samples: np.ndarray
    sample_period: float
    lead_label: str = ""
    source_id: str = ""
    calibration: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise InputError("signal must be a non-empty 1-D array")
        if not np.isfinite(samples).all():
            raise InputError("signal contains non-finite samples")
        if not (np.isfinite(self.sample_period) and self.sample_period > 0):
            raise InputError("sample_period must be positive")
        object.__setattr__(self, "samples", _frozen(samples))
        object.__setattr__(self, "sample_period", float(self.sample_period))

    @property
    def fs(self):
        return 1.0 / self.sample_period

    @property
    def duration(self):
        return self.samples.size * self.sample_period

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples):
        return CalibratedSignal(samples, self.sample_period, self.lead_label,
                                self.source_id, dict(self.calibration))

    def __eq__(self, other):
        return (isinstance(other, CalibratedSignal)
                and self.sample_period == other.sample_period
                and self.lead_label == other.lead_label
                and self.source_id == other.source_id
                and self.calibration == other.calibration
                and np.array_equal(self.samples, other.samples))

    def to_dict(self):
        return {
            "schema_version": SIGNAL_SCHEMA_VERSION,
            "lead_label": self.lead_label,
            "sample_period_s": self.sample_period,
            "samples_mV": [float(v) for v in np.round(self.samples, SAMPLE_DECIMALS) + 0.0],
            "source_id": self.source_id,
            "calibration": dict(self.calibration),
        }

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise SchemaError("signal must be a JSON object")
        if obj.get("schema_version") != SIGNAL_SCHEMA_VERSION:
            raise SchemaError(f"unknown signal schema_version {obj.get('schema_version')!r}")
        for key in ("sample_period_s", "samples_mV"):
            if key not in obj:
                raise SchemaError(f"signal is missing required field {key!r}")
        return cls(
            samples=np.asarray(obj["samples_mV"], dtype=np.float64),
            sample_period=obj["sample_period_s"],
            lead_label=obj.get("lead_label", ""),
            source_id=obj.get("source_id", ""),
            calibration=obj.get("calibration") or {},
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, text):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"signal file is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time_s", "amplitude_mV"])
        for i, v in enumerate(self.samples):
            writer.writerow([repr(i * self.sample_period), repr(float(v))])
        return buf.getvalue()


def extract_envelopes(bin_img):
    """Per-column first ink pixel scanning down (top) and up (bottom)."""
    mask = bin_img.mask
    present = mask.any(axis=0)
    if not present.any():
        raise EmptyMask("binary mask contains no ink")
    h = mask.shape[0]
    top = np.argmax(mask, axis=0).astype(np.float64)
    bottom = (h - 1 - np.argmax(mask[::-1], axis=0)).astype(np.float64)
    gaps = ~present
    return Envelope(top, gaps), Envelope(bottom, gaps)


def fill_gaps(env, strategy="repeat_previous"):
    if strategy not in GAP_STRATEGIES:
        raise InputError(f"unknown gap strategy {strategy!r}; choose from {GAP_STRATEGIES}")
    gaps = env.gap_mask
    if gaps.all():
        raise AllGaps("envelope has no present values")
    if not gaps.any():
        return Envelope(env.values.copy(), gaps.copy())
    idx = np.arange(len(env))
    present = np.flatnonzero(~gaps)
    if strategy == "linear_interpolate":
        filled = np.interp(idx, present, env.values[present])
    else:
        # index of the most recent present column; leading gaps borrow the first one
        last = np.maximum.accumulate(np.where(gaps, -1, idx))
        last[last < 0] = present[0]
        filled = env.values[last]
    return Envelope(filled, np.zeros(len(env), dtype=bool))


def average_envelopes(top, bottom, height=None):
    if len(top) != len(bottom):
        raise WidthMismatch(f"envelope widths differ: {len(top)} vs {len(bottom)}")
    if top.gap_mask.any() or bottom.gap_mask.any():
        raise InputError("envelopes must be gap-free before averaging")
    return PixelTrace((top.values + bottom.values) / 2.0, height)


def trim_gap_margins(top, bottom):
    """Drop leading/trailing columns without ink; returns envelopes and the column offset."""
    present = np.flatnonzero(~top.gap_mask)
    if present.size == 0:
        raise AllGaps("envelope has no present values")
    lo, hi = present[0], present[-1] + 1
    return (Envelope(top.values[lo:hi], top.gap_mask[lo:hi]),
            Envelope(bottom.values[lo:hi], bottom.gap_mask[lo:hi]), int(lo))


def calibrate(trace, params, lead_label="", source_id=""):
    """Map a pixel trace to millivolts over time.

    Rows grow downward, so ink above the baseline row gives positive
    amplitude.  Without an explicit baseline the median row is used.
    """
    if not isinstance(params, CalibrationParams):
        raise InvalidParams("params must be CalibrationParams")
    if trace.width < 2:
        raise InputError("trace must span at least two columns")
    baseline = params.baseline_row_px
    if baseline is None:
        baseline = float(np.median(trace.samples))
    elif trace.height is not None and baseline >= trace.height:
        raise InvalidParams("baseline_row_px lies outside the image")
    mm_per_px = params.mm_per_px
    amplitude = (baseline - trace.samples) * mm_per_px / params.gain_mm_per_mV
    calibration = params.to_dict()
    calibration["baseline_row_px"] = float(baseline)
    return CalibratedSignal(
        samples=amplitude,
        sample_period=mm_per_px / params.paper_speed_mm_per_s,
        lead_label=lead_label,
        source_id=source_id,
        calibration=calibration,
    )
