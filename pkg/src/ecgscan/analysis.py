"""Back-end signal analysis: smoothing filters, R-peak detection, beat metrics
and P/Q/S/T delineation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import find_peaks

from .errors import (
    EmptyFilter,
    InputError,
    NoPeaks,
    SamplingRateUnsupported,
    SignalTooShort,
    TooFewPeaks,
)
from .extraction import CalibratedSignal

FILTER_KINDS = ("fir_direct", "savitzky_golay")


@dataclass(frozen=True)
class FilterSpec:
    kind: str
    coefficients: tuple = ()
    window_length: int | None = None
    poly_order: int | None = None

    def __post_init__(self):
        if self.kind == "fir_direct":
            if len(self.coefficients) < 1:
                raise EmptyFilter("FIR filter needs at least one tap")
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        elif self.kind == "savitzky_golay":
            _check_savgol(self.window_length, self.poly_order)
        else:
            raise InputError(f"unknown filter kind {self.kind!r}")

    def apply(self, sig):
        if self.kind == "fir_direct":
            return fir_filter(sig, self.coefficients)
        return savgol_filter(sig, self.window_length, self.poly_order)

    def to_dict(self):
        if self.kind == "fir_direct":
            return {"kind": self.kind, "coefficients": list(self.coefficients)}
        return {"kind": self.kind, "window_length": self.window_length, "poly_order": self.poly_order}

    @classmethod
    def from_dict(cls, obj):
        if obj.get("kind") == "fir_direct":
            return cls("fir_direct", coefficients=tuple(obj.get("coefficients", ())))
        return cls(obj.get("kind"), window_length=obj.get("window_length"), poly_order=obj.get("poly_order"))


def _check_savgol(window_length, poly_order):
    if not isinstance(window_length, (int, np.integer)) or window_length < 3 or window_length % 2 == 0:
        raise InputError("window_length must be an odd integer >= 3")
    if not isinstance(poly_order, (int, np.integer)) or not 0 <= poly_order < window_length:
        raise InputError("poly_order must satisfy 0 <= poly_order < window_length")


# -- filters -----------------------------------------------------------------

def fir_filter(sig, coefficients):
    """Causal FIR ``y[n] = sum_k h[k] x[n-k]``; samples before the start repeat ``x[0]``."""
    h = np.asarray(coefficients, dtype=np.float64).ravel()
    if h.size < 1:
        raise EmptyFilter("FIR filter needs at least one tap")
    x = sig.samples
    padded = np.concatenate([np.full(h.size - 1, x[0]), x])
    y = np.convolve(padded, h, mode="valid")
    return sig.with_samples(y)


def savgol_coefficients(window_length, poly_order, pos=None, deriv=0):
    """Weights that evaluate the least-squares polynomial fit at ``pos``.

    ``pos`` indexes into the window (centre by default).  The returned
    weights are applied as a dot product with the window samples.
    """
    _check_savgol(window_length, poly_order)
    if pos is None:
        pos = window_length // 2
    x = np.arange(window_length, dtype=np.float64) - pos
    vander = np.vander(x, poly_order + 1, increasing=True)
    # row ``deriv`` of the pseudo-inverse gives the fitted coefficient of x**deriv at x=0
    pinv = np.linalg.pinv(vander)
    return pinv[deriv] * math.factorial(deriv)


def savgol_filter(sig, window_length, poly_order):
    """Savitzky-Golay smoothing, length preserving.

    Interior samples use the centred kernel.  The first and last half-window
    samples are evaluated from a polynomial fit to the nearest full window.
    """
    _check_savgol(window_length, poly_order)
    x = sig.samples
    n = x.size
    if n < window_length:
        raise SignalTooShort(f"signal has {n} samples, window needs {window_length}")
    half = window_length // 2
    kernel = savgol_coefficients(window_length, poly_order)
    y = np.empty(n)
    # correlate with the kernel: y[i] = sum_j kernel[j] * x[i - half + j]
    y[half:n - half] = np.correlate(x, kernel, mode="valid")
    head = x[:window_length]
    tail = x[-window_length:]
    for i in range(half):
        y[i] = savgol_coefficients(window_length, poly_order, pos=i) @ head
        j = window_length - half + i
        y[n - half + i] = savgol_coefficients(window_length, poly_order, pos=j) @ tail
    return sig.with_samples(y)


def default_filter_chain(fs):
    """Savitzky-Golay (15 samples, cubic at 250 Hz) scaled to the sampling rate."""
    window = int(round(15 * fs / 250.0))
    if window % 2 == 0:
        window += 1
    window = max(window, 5)
    return [FilterSpec("savitzky_golay", window_length=window, poly_order=3)]


def apply_filter_chain(sig, chain):
    for spec in chain:
        sig = spec.apply(sig)
    return sig


# -- R-peak detection --------------------------------------------------------

@dataclass(frozen=True)
class PanTompkinsConfig:
    band_low_hz: float = 5.0
    band_high_hz: float = 15.0
    integration_window_s: float = 0.150
    refractory_s: float = 0.200
    t_wave_window_s: float = 0.360
    searchback_factor: float = 1.66
    signal_weight: float = 0.125
    noise_weight: float = 0.125
    searchback_weight: float = 0.25
    learning_s: float = 2.0
    snap_window_s: float = 0.050
    min_duration_s: float = 3.0
    min_fs: float = 50.0
    max_fs: float = 1000.0


@dataclass(frozen=True, eq=False)
class RPeakSet:
    indices: np.ndarray
    sample_period: float
    signal_ref: str = ""

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size > 1 and (np.diff(idx) <= 0).any():
            raise InputError("R-peak indices must be strictly increasing")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return self.indices.size

    @property
    def times(self):
        return self.indices * self.sample_period

    def rr_intervals(self):
        """RR intervals in seconds."""
        return np.diff(self.indices) * self.sample_period

    def __eq__(self, other):
        return (isinstance(other, RPeakSet) and self.sample_period == other.sample_period
                and np.array_equal(self.indices, other.indices))


def _bandpass_kernel(fs, low, high):
    numtaps = int(round(0.5 * fs)) | 1
    n = np.arange(numtaps) - numtaps // 2
    lo, hi = low / fs, min(high, 0.45 * fs) / fs
    h = 2 * hi * np.sinc(2 * hi * n) - 2 * lo * np.sinc(2 * lo * n)
    h *= np.hamming(numtaps)
    centre = (low + high) / 2.0
    gain = abs(np.sum(h * np.exp(-2j * np.pi * centre / fs * n)))
    return h / gain


def _same_conv(x, kernel):
    """Zero-phase convolution for odd-length kernels with edge replication."""
    half = kernel.size // 2
    padded = np.concatenate([np.full(half, x[0]), x, np.full(half, x[-1])])
    return np.convolve(padded, kernel, mode="valid")


def pan_tompkins_stages(x, fs, config=None):
    """Band-pass, derivative, squared and integrated waveforms (all delay free)."""
    config = config or PanTompkinsConfig()
    x = np.asarray(x, dtype=np.float64)
    x = x - np.median(x)
    band = _same_conv(x, _bandpass_kernel(fs, config.band_low_hz, config.band_high_hz))
    deriv = _same_conv(band, np.array([1.0, 2.0, 0.0, -2.0, -1.0]) * fs / 8.0)
    squared = deriv ** 2
    width = max(1, int(round(config.integration_window_s * fs)))
    if width % 2 == 0:
        width += 1
    integrated = _same_conv(squared, np.full(width, 1.0 / width))
    return band, deriv, squared, integrated


def _check_detectable(sig, config):
    fs = sig.fs
    if not config.min_fs * (1 - 1e-9) <= fs <= config.max_fs * (1 + 1e-9):
        raise SamplingRateUnsupported(
            f"sampling rate {fs:.1f} Hz outside [{config.min_fs:g}, {config.max_fs:g}] Hz")
    if sig.duration < config.min_duration_s - 1e-9:
        raise SignalTooShort(f"signal lasts {sig.duration:.2f} s; need >= {config.min_duration_s:g} s")


def pan_tompkins(sig, config=None):
    """Detect R-peaks with the Pan-Tompkins QRS detector.

    Detection runs on the moving-window integral; each accepted beat is then
    moved to the largest sample of the input signal within the snap window.
    """
    config = config or PanTompkinsConfig()
    _check_detectable(sig, config)
    fs = sig.fs
    raw = sig.samples
    _, deriv, _, mwi = pan_tompkins_stages(raw, fs, config)

    refractory = int(round(config.refractory_s * fs))
    cand, _ = find_peaks(mwi, distance=max(1, refractory))
    if cand.size == 0 or mwi.max() <= 0:
        return RPeakSet(np.array([], dtype=np.int64), sig.sample_period, sig.source_id)

    learn = mwi[: max(1, int(config.learning_s * fs))]
    spki = 0.25 * learn.max()
    npki = 0.5 * learn.mean()
    slope_half = max(1, int(round(0.075 * fs)))

    def slope_at(i):
        return np.abs(deriv[max(0, i - slope_half): i + slope_half + 1]).max()

    qrs = []
    qrs_slopes = []
    pending = []  # (index, value) candidates classified as noise since the last beat

    def thresholds():
        thr1 = npki + 0.25 * (spki - npki)
        return thr1, 0.5 * thr1

    def rr_average():
        if len(qrs) < 2:
            return None
        return float(np.mean(np.diff(qrs[-9:])))

    def accept(i, value, weight):
        nonlocal spki
        qrs.append(int(i))
        qrs_slopes.append(slope_at(i))
        spki = weight * value + (1 - weight) * spki
        pending.clear()

    def search_back(limit):
        rr = rr_average()
        while rr is not None and qrs and limit - qrs[-1] > config.searchback_factor * rr:
            _, thr2 = thresholds()
            eligible = [(v, i) for i, v in pending
                        if i - qrs[-1] > refractory and v > thr2 and i < limit]
            if not eligible:
                break
            v, i = max(eligible)
            rest = [(j, w) for j, w in pending if j > i]
            accept(i, v, config.searchback_weight)
            pending.extend(rest)
            rr = rr_average()

    t_window = int(round(config.t_wave_window_s * fs))
    for i in cand:
        v = mwi[i]
        search_back(i)
        thr1, _ = thresholds()
        if qrs and i - qrs[-1] <= refractory:
            continue
        if v > thr1:
            if qrs and i - qrs[-1] < t_window and slope_at(i) < 0.5 * qrs_slopes[-1]:
                npki = config.noise_weight * v + (1 - config.noise_weight) * npki
                pending.append((int(i), v))
                continue
            accept(i, v, config.signal_weight)
        else:
            npki = config.noise_weight * v + (1 - config.noise_weight) * npki
            pending.append((int(i), v))
    search_back(raw.size)

    snap = max(1, int(round(config.snap_window_s * fs)))
    snapped = []
    for i in qrs:
        lo, hi = max(0, i - snap), min(raw.size, i + snap + 1)
        j = lo + int(np.argmax(raw[lo:hi]))
        if snapped and j - snapped[-1] <= refractory:
            if raw[j] > raw[snapped[-1]]:
                snapped[-1] = j
            continue
        snapped.append(j)
    return RPeakSet(np.asarray(snapped, dtype=np.int64), sig.sample_period, sig.source_id)


# -- beat metrics ------------------------------------------------------------

def heart_rate(peaks):
    """Mean heart rate in beats per minute."""
    if len(peaks) < 2:
        raise TooFewPeaks("heart rate needs at least two R-peaks")
    return 60.0 / float(np.mean(peaks.rr_intervals()))


def rr_std(peaks):
    """Population standard deviation of RR intervals, in milliseconds."""
    if len(peaks) < 3:
        raise TooFewPeaks("RR standard deviation needs at least three R-peaks")
    return float(np.std(peaks.rr_intervals() * 1000.0))


# -- delineation -------------------------------------------------------------

@dataclass(frozen=True)
class DelineationConfig:
    qs_window_s: float = 0.080
    p_window_s: float = 0.300
    t_window_s: float = 0.400
    t_rr_fraction: float = 0.7
    prominence_floor_mV: float = 0.05


@dataclass(frozen=True)
class WaveFiducials:
    r_idx: int
    p_idx: int | None = None
    q_idx: int | None = None
    s_idx: int | None = None
    t_idx: int | None = None
    flags: tuple = ()

    def ordered(self):
        seq = [self.p_idx, self.q_idx, self.r_idx, self.s_idx, self.t_idx]
        present = [v for v in seq if v is not None]
        return all(a < b for a, b in zip(present, present[1:]))

    def to_dict(self):
        return {"p": self.p_idx, "q": self.q_idx, "r": self.r_idx, "s": self.s_idx,
                "t": self.t_idx, "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, obj):
        return cls(r_idx=obj["r"], p_idx=obj.get("p"), q_idx=obj.get("q"), s_idx=obj.get("s"),
                   t_idx=obj.get("t"), flags=tuple(obj.get("flags", ())))


def _window_extremum(x, start, stop, find_max):
    """Extremum strictly inside (start, stop); ``None`` if the window is clipped."""
    if start < 0 or stop > x.size - 1 or stop - start < 2:
        return None, 0.0
    seg = x[start + 1:stop]
    k = int(np.argmax(seg) if find_max else np.argmin(seg))
    value = seg[k]
    edges = max(x[start], x[stop]) if find_max else min(x[start], x[stop])
    prominence = value - edges if find_max else edges - value
    return start + 1 + k, float(prominence)


def delineate_waves(sig, peaks, config=None):
    """Locate P, Q, S and T around each R-peak by windowed extremum search."""
    config = config or DelineationConfig()
    if len(peaks) == 0:
        raise NoPeaks("delineation needs at least one R-peak")
    x = sig.samples
    fs = sig.fs

    def ms(seconds):
        return int(round(seconds * fs))

    qs = ms(config.qs_window_s)
    p_far = ms(config.p_window_s)
    r_list = [int(i) for i in peaks.indices]
    beats = []
    for k, r in enumerate(r_list):
        prev_r = r_list[k - 1] if k > 0 else None
        next_r = r_list[k + 1] if k + 1 < len(r_list) else None
        flags = []

        q, _ = _window_extremum(x, r - qs, r, find_max=False)
        s, _ = _window_extremum(x, r, r + qs, find_max=False)

        p_start = r - p_far
        if prev_r is not None and p_start <= prev_r + qs:
            p = None
        else:
            p, p_prom = _window_extremum(x, p_start, r - qs, find_max=True)
            if p is not None and p_prom < config.prominence_floor_mV:
                flags.append("p_low_prominence")

        t_span = config.t_window_s
        if next_r is not None:
            t_span = min(t_span, config.t_rr_fraction * (next_r - r) / fs)
        t, t_prom = _window_extremum(x, r + qs, r + ms(t_span), find_max=True)
        if t is not None and t_prom < config.prominence_floor_mV:
            flags.append("t_low_prominence")

        beats.append(WaveFiducials(r_idx=r, p_idx=p, q_idx=q, s_idx=s, t_idx=t, flags=tuple(flags)))
    return beats


# -- report ------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisReport:
    r_peaks: RPeakSet
    heart_rate_bpm: float | None
    rr_std_ms: float | None
    fiducials: list = field(default_factory=list)
    filter_chain: list = field(default_factory=list)

    def to_dict(self):
        return {
            "heart_rate_bpm": self.heart_rate_bpm,
            "rr_std_ms": self.rr_std_ms,
            "r_peaks": [int(i) for i in self.r_peaks.indices],
            "beats": [b.to_dict() for b in self.fiducials],
            "filter_chain": [f.to_dict() for f in self.filter_chain],
        }

    @classmethod
    def from_dict(cls, obj, sample_period):
        return cls(
            r_peaks=RPeakSet(obj.get("r_peaks", []), sample_period),
            heart_rate_bpm=obj.get("heart_rate_bpm"),
            rr_std_ms=obj.get("rr_std_ms"),
            fiducials=[WaveFiducials.from_dict(b) for b in obj.get("beats", [])],
            filter_chain=[FilterSpec.from_dict(f) for f in obj.get("filter_chain", [])],
        )


def analyze(sig, filter_chain=None, detector=None, delineation=None):
    """Filter chain, R-peaks, beat metrics and fiducials for one signal.

    Raises :class:`TooFewPeaks` (with the partial report attached as
    ``.report``) when fewer than two R-peaks are found.
    """
    if filter_chain is None:
        filter_chain = default_filter_chain(sig.fs)
    filtered = apply_filter_chain(sig, filter_chain)
    # detection snaps to the unsmoothed input; delineation uses the filtered trace
    peaks = pan_tompkins(sig, detector)
    partial = AnalysisReport(peaks, None, None, [], list(filter_chain))
    if len(peaks) < 2:
        err = TooFewPeaks(f"found {len(peaks)} R-peak(s); need at least two")
        err.report = partial
        raise err
    hr = heart_rate(peaks)
    sd = rr_std(peaks) if len(peaks) >= 3 else None
    beats = delineate_waves(filtered, peaks, delineation)
    return replace(partial, heart_rate_bpm=hr, rr_std_ms=sd, fiducials=beats)
