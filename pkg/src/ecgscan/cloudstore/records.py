"""Trace records and their canonical JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from datetime import datetime, timezone

import numpy as np

from ..analysis import AnalysisReport, RPeakSet, analyze, default_filter_chain
from ..errors import AnalysisError, EcgScanError, SchemaError, TooFewPeaks, ValidationError
from ..extraction import SAMPLE_DECIMALS, CalibratedSignal

RECORD_SCHEMA_VERSION = 1
REQUIRED_FIELDS = ("schema_version", "patient_ref", "lead_label", "signal")


def utc_now():
    return datetime.now(timezone.utc)


def format_timestamp(dt):
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def quantize_signal(sig):
    q = np.round(sig.samples, SAMPLE_DECIMALS) + 0.0
    if np.array_equal(q, sig.samples):
        return sig
    return sig.with_samples(q)


@dataclass(frozen=True)
class TraceRecord:
    patient_ref: str
    lead_label: str
    signal: CalibratedSignal
    analysis: AnalysisReport | None = None
    id: str | None = None
    created_at: str | None = None
    source_image_ref: str | None = None

    def __post_init__(self):
        if not isinstance(self.signal, CalibratedSignal):
            raise ValidationError("record signal must be a CalibratedSignal")
        object.__setattr__(self, "signal", quantize_signal(self.signal))

    def to_dict(self):
        return {
            "schema_version": RECORD_SCHEMA_VERSION,
            "id": self.id,
            "patient_ref": self.patient_ref,
            "lead_label": self.lead_label,
            "created_at": self.created_at,
            "signal": self.signal.to_dict(),
            "analysis": None if self.analysis is None else self.analysis.to_dict(),
            "source_image_ref": self.source_image_ref,
        }

    def summary(self):
        return {
            "id": self.id,
            "patient_ref": self.patient_ref,
            "lead_label": self.lead_label,
            "created_at": self.created_at,
            "heart_rate_bpm": None if self.analysis is None else self.analysis.heart_rate_bpm,
        }


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                      allow_nan=False).encode("utf-8")


def serialize_trace(record):
    """Canonical bytes: sorted keys, no whitespace, shortest round-trip floats."""
    return canonical_json(record.to_dict())


def record_from_dict(obj, require_id=False):
    if not isinstance(obj, dict):
        raise SchemaError("trace record must be a JSON object")
    if obj.get("schema_version") != RECORD_SCHEMA_VERSION:
        raise SchemaError(f"unknown record schema_version {obj.get('schema_version')!r}")
    for key in REQUIRED_FIELDS:
        if key not in obj:
            raise SchemaError(f"record is missing required field {key!r}")
    if require_id and not obj.get("id"):
        raise SchemaError("record is missing its id")
    for key in ("patient_ref", "lead_label"):
        if not isinstance(obj[key], str):
            raise SchemaError(f"record field {key!r} must be a string")
    try:
        signal = CalibratedSignal.from_dict(obj["signal"])
    except SchemaError:
        raise
    except (EcgScanError, TypeError, ValueError) as exc:
        raise ValidationError(f"invalid signal: {exc}") from exc
    analysis = obj.get("analysis")
    if analysis is not None:
        try:
            analysis = AnalysisReport.from_dict(analysis, signal.sample_period)
        except (EcgScanError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid analysis block: {exc}") from exc
    return TraceRecord(
        patient_ref=obj["patient_ref"],
        lead_label=obj["lead_label"],
        signal=signal,
        analysis=analysis,
        id=obj.get("id"),
        created_at=obj.get("created_at"),
        source_image_ref=obj.get("source_image_ref"),
    )


def deserialize_trace(data):
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"record is not valid JSON: {exc}") from exc
    return record_from_dict(obj)


def compute_analysis(signal):
    """Analysis attached to records uploaded without one.

    Failures still yield a report: an empty beat list when detection was
    impossible, or peaks without beat metrics when too few were found.
    """
    try:
        return analyze(signal)
    except TooFewPeaks as exc:
        return exc.report
    except AnalysisError:
        empty = RPeakSet([], signal.sample_period, signal.source_id)
        return AnalysisReport(empty, None, None, [], default_filter_chain(signal.fs))


def with_analysis(record):
    if record.analysis is not None:
        return record
    return replace(record, analysis=compute_analysis(record.signal))
