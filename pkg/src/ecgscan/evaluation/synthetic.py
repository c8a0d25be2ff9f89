"""Synthetic ECG signals and rendered trace photographs with exact ground truth."""

from __future__ import annotations

import dataclasses
import io
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..errors import InvalidSpec
from ..extraction import CalibratedSignal
from ..imaging import RasterImage, rotate
from .matching import LABELS, FeaturePointSet

GAIN_MM_PER_MV = 10.0
PAPER_SPEED_MM_PER_S = 25.0


@dataclass(frozen=True)
class WaveformParams:
    """Gaussian-sum beat template.  Widths are Gaussian standard deviations."""

    heart_rate_bpm: float = 75.0
    duration_s: float = 10.0
    p_amp_mV: float = 0.15
    q_amp_mV: float = -0.12
    r_amp_mV: float = 1.1
    s_amp_mV: float = -0.25
    t_amp_mV: float = 0.3
    p_width_ms: float = 25.0
    q_width_ms: float = 10.0
    r_width_ms: float = 12.0
    s_width_ms: float = 10.0
    t_width_ms: float = 40.0
    pr_offset_ms: float = 170.0
    qs_offset_ms: float = 35.0
    rt_offset_ms: float | None = None
    first_beat_s: float | None = None
    rr_jitter_ms: float = 0.0
    dropped_beats: tuple = ()
    noise_mV: float = 0.0

    def validate(self):
        positive = ("heart_rate_bpm", "duration_s", "p_width_ms", "q_width_ms", "r_width_ms",
                    "s_width_ms", "t_width_ms", "pr_offset_ms", "qs_offset_ms")
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidSpec(f"waveform.{name} must be positive, got {v!r}")
        if self.rt_offset_ms is not None and not self.rt_offset_ms > 0:
            raise InvalidSpec("waveform.rt_offset_ms must be positive")
        if self.rr_jitter_ms < 0 or self.noise_mV < 0:
            raise InvalidSpec("waveform jitter and noise must be non-negative")
        return self

    @property
    def rr_s(self):
        return 60.0 / self.heart_rate_bpm

    def t_offset_s(self):
        if self.rt_offset_ms is not None:
            return self.rt_offset_ms / 1000.0
        # QT shortens with rate roughly as sqrt(RR)
        return 0.3 * math.sqrt(self.rr_s)


@dataclass(frozen=True)
class PaperParams:
    px_per_mm: float = 10.0
    height_mm: float = 35.0
    grid_minor_mm: float = 1.0
    grid_major_mm: float = 5.0
    grid_color: tuple = (255, 170, 170)
    ink_color: tuple = (25, 25, 25)
    stroke_width_px: float = 3.0
    baseline_fraction: float = 0.6

    def validate(self):
        for name in ("px_per_mm", "height_mm", "grid_minor_mm", "grid_major_mm", "stroke_width_px"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise InvalidSpec(f"paper.{name} must be positive, got {v!r}")
        if not 0 < self.baseline_fraction < 1:
            raise InvalidSpec("paper.baseline_fraction must be in (0, 1)")
        for name in ("grid_color", "ink_color"):
            c = getattr(self, name)
            if len(c) != 3 or any(not 0 <= v <= 255 for v in c):
                raise InvalidSpec(f"paper.{name} must be an RGB triple in [0, 255]")
        return self


@dataclass(frozen=True)
class Distortions:
    rotation_deg: float = 0.0
    noise_sd: float = 0.0
    lighting_gradient: float = 0.0
    jpeg_quality: int | None = None

    def validate(self):
        if not -10 <= self.rotation_deg <= 10:
            raise InvalidSpec("distortions.rotation_deg must be in [-10, 10]")
        if self.noise_sd < 0 or not 0 <= self.lighting_gradient < 1:
            raise InvalidSpec("distortions.noise_sd must be >= 0 and lighting_gradient in [0, 1)")
        if self.jpeg_quality is not None and not 1 <= self.jpeg_quality <= 100:
            raise InvalidSpec("distortions.jpeg_quality must be in [1, 100]")
        return self


@dataclass(frozen=True)
class SyntheticTraceSpec:
    waveform: WaveformParams = field(default_factory=WaveformParams)
    paper: PaperParams = field(default_factory=PaperParams)
    distortions: Distortions = field(default_factory=Distortions)

    def validate(self):
        self.waveform.validate()
        self.paper.validate()
        self.distortions.validate()
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj):
        if not isinstance(obj, dict):
            raise InvalidSpec("trace spec must be a JSON object")
        parts = {}
        for name, klass in (("waveform", WaveformParams), ("paper", PaperParams),
                            ("distortions", Distortions)):
            sub = obj.get(name, {})
            if not isinstance(sub, dict):
                raise InvalidSpec(f"{name} must be a JSON object")
            known = {f.name for f in dataclasses.fields(klass)}
            unknown = set(sub) - known
            if unknown:
                raise InvalidSpec(f"unknown {name} fields: {sorted(unknown)}")
            sub = dict(sub)
            for key in ("grid_color", "ink_color", "dropped_beats"):
                if key in sub:
                    sub[key] = tuple(sub[key])
            try:
                parts[name] = klass(**sub)
            except TypeError as exc:
                raise InvalidSpec(str(exc)) from exc
        unknown = set(obj) - {"waveform", "paper", "distortions"}
        if unknown:
            raise InvalidSpec(f"unknown spec fields: {sorted(unknown)}")
        try:
            return cls(**parts).validate()
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc


class EcgModel:
    """Continuous-time synthetic ECG built from per-beat Gaussian waves."""

    def __init__(self, waveform, seed=0):
        self.waveform = waveform.validate()
        rng = np.random.default_rng(seed)
        w = waveform
        rr = w.rr_s
        first = w.first_beat_s if w.first_beat_s is not None else 0.6 * rr
        times = []
        t = first
        while t < w.duration_s + rr:
            times.append(t)
            step = rr + (rng.normal(0.0, w.rr_jitter_ms / 1000.0) if w.rr_jitter_ms else 0.0)
            t += max(step, 0.3)
        keep = [i for i in range(len(times)) if i not in set(w.dropped_beats)]
        self.r_times = np.array([times[i] for i in keep])
        t_off = w.t_offset_s()
        self.waves = [
            ("P", -w.pr_offset_ms / 1000.0, w.p_amp_mV, w.p_width_ms / 1000.0),
            ("Q", -w.qs_offset_ms / 1000.0, w.q_amp_mV, w.q_width_ms / 1000.0),
            ("R", 0.0, w.r_amp_mV, w.r_width_ms / 1000.0),
            ("S", w.qs_offset_ms / 1000.0, w.s_amp_mV, w.s_width_ms / 1000.0),
            ("T", t_off, w.t_amp_mV, w.t_width_ms / 1000.0),
        ]
        self.noise_mV = w.noise_mV
        self._noise_seed = int(rng.integers(0, 2**32))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        for _, offset, amp, sd in self.waves:
            if amp == 0:
                continue
            for r in self.r_times:
                centre = r + offset
                lo, hi = np.searchsorted(t, [centre - 6 * sd, centre + 6 * sd])
                if hi > lo:
                    seg = t[lo:hi]
                    out[lo:hi] += amp * np.exp(-0.5 * ((seg - centre) / sd) ** 2)
        return out

    def features(self):
        """Fiducial times inside the record, one point per wave per beat."""
        points = []
        for label, offset, amp, _ in self.waves:
            if amp == 0 and label != "R":
                continue
            for r in self.r_times:
                t = r + offset
                if 0 <= t <= self.waveform.duration_s:
                    points.append((float(t), label))
        return FeaturePointSet(points, source="ground_truth")


def synthesize_ecg(waveform, fs=250.0, seed=0, source_id="synthetic"):
    """Sampled synthetic ECG and its fiducial ground truth."""
    model = EcgModel(waveform, seed)
    n = int(round(waveform.duration_s * fs))
    t = np.arange(n) / fs
    x = model(t)
    if model.noise_mV:
        x = x + np.random.default_rng(model._noise_seed).normal(0.0, model.noise_mV, n)
    sig = CalibratedSignal(x, 1.0 / fs, lead_label="II", source_id=source_id)
    return sig, model.features()


@dataclass
class GroundTruth:
    signal: CalibratedSignal
    features: FeaturePointSet
    skew_angle: float
    trace_height_px: float
    baseline_row_px: float

    def to_dict(self):
        return {
            "signal": self.signal.to_dict(),
            "features": self.features.to_dict(),
            "skew_angle": self.skew_angle,
            "trace_height_px": self.trace_height_px,
            "baseline_row_px": self.baseline_row_px,
        }


def _draw_grid(canvas, paper):
    h, w, _ = canvas.shape
    ppm = paper.px_per_mm
    major = np.asarray(paper.grid_color, dtype=np.float64)
    minor = 255.0 - 0.5 * (255.0 - major)
    ratio = max(1, int(round(paper.grid_major_mm / paper.grid_minor_mm)))
    for axis, size in ((0, h), (1, w)):
        k = 0
        while True:
            pos = int(round(k * paper.grid_minor_mm * ppm))
            if pos >= size:
                break
            color = major if k % ratio == 0 else minor
            if axis == 0:
                canvas[pos, :, :] = np.minimum(canvas[pos, :, :], color)
            else:
                canvas[:, pos, :] = np.minimum(canvas[:, pos, :], color)
            k += 1


def render_synthetic_trace(spec, seed=0, source_id="synthetic"):
    """Render a trace photograph and return it with its ground truth.

    Each column is one sample: the paper runs at 25 mm/s and the trace is
    drawn at 10 mm/mV, so the column spacing fixes the sample period.
    """
    spec = spec.validate()
    paper, dist = spec.paper, spec.distortions
    model = EcgModel(spec.waveform, seed)
    ppm = paper.px_per_mm
    height = int(round(paper.height_mm * ppm))
    width = int(round(spec.waveform.duration_s * PAPER_SPEED_MM_PER_S * ppm))
    if height < 8 or width < 8:
        raise InvalidSpec("rendered image would be smaller than 8x8 pixels")
    sample_period = 1.0 / (PAPER_SPEED_MM_PER_S * ppm)
    baseline = paper.baseline_fraction * (height - 1)
    px_per_mV = GAIN_MM_PER_MV * ppm

    sub = 8
    xs = (np.arange(width * sub + 1) / sub - 0.5) * sample_period
    rows = baseline - model(xs) * px_per_mV
    rows = rows[:-1].reshape(width, sub)
    edges = np.append(rows[1:, 0], rows[-1, -1])
    lo = np.minimum(rows.min(axis=1), edges)
    hi = np.maximum(rows.max(axis=1), edges)
    half = paper.stroke_width_px / 2.0
    top = np.ceil(lo - half)
    bottom = np.floor(hi + half)
    r = np.arange(height)[:, None]
    ink = (r >= top[None, :]) & (r <= bottom[None, :])

    canvas = np.full((height, width, 3), 255.0)
    _draw_grid(canvas, paper)
    canvas[ink] = np.asarray(paper.ink_color, dtype=np.float64)
    image = RasterImage(canvas.astype(np.uint8))

    if dist.rotation_deg:
        image = rotate(image, dist.rotation_deg)
    rng = np.random.default_rng([seed, 1])
    if dist.lighting_gradient or dist.noise_sd:
        px = image.pixels.astype(np.float64)
        if dist.lighting_gradient:
            ramp = 1.0 - dist.lighting_gradient * np.linspace(0.0, 1.0, px.shape[1])
            px *= ramp[None, :, None]
        if dist.noise_sd:
            px += rng.normal(0.0, dist.noise_sd, px.shape)
        image = RasterImage(np.clip(np.floor(px + 0.5), 0, 255).astype(np.uint8))
    if dist.jpeg_quality is not None:
        buf = io.BytesIO()
        Image.fromarray(np.asarray(image.pixels)).save(buf, format="JPEG", quality=dist.jpeg_quality)
        with Image.open(io.BytesIO(buf.getvalue())) as im:
            image = RasterImage(np.asarray(im.convert("RGB")))

    t = np.arange(width) * sample_period
    truth_signal = CalibratedSignal(model(t), sample_period, lead_label="II", source_id=source_id)
    truth = GroundTruth(truth_signal, model.features(), float(dist.rotation_deg), float(height), baseline)
    return image, truth


__all__ = [
    "Distortions", "EcgModel", "GroundTruth", "LABELS", "PaperParams", "SyntheticTraceSpec",
    "WaveformParams", "render_synthetic_trace", "synthesize_ecg",
]
