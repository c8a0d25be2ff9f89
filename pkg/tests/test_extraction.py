import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ecgscan.binarization import BinaryImage
from ecgscan.errors import AllGaps, EmptyMask, InputError, InvalidParams, SchemaError, WidthMismatch
from ecgscan.extraction import (CalibratedSignal, CalibrationParams, Envelope, PixelTrace,
                                average_envelopes, calibrate, extract_envelopes, fill_gaps,
                                trim_gap_margins)

NAN = float("nan")


def env(values):
    arr = np.array([NAN if v is None else v for v in values], dtype=float)
    return Envelope(arr, np.isnan(arr))


def test_envelopes_min_max():
    mask = np.zeros((10, 2), bool)
    mask[[3, 4, 7], 0] = True
    mask[5, 1] = True
    top, bottom = extract_envelopes(BinaryImage(mask))
    assert top.values.tolist() == [3, 5]
    assert bottom.values.tolist() == [7, 5]


def test_envelopes_gap_mask():
    mask = np.ones((4, 5), bool)
    mask[:, 2] = False
    top, bottom = extract_envelopes(BinaryImage(mask))
    assert top.gap_mask.tolist() == [False, False, True, False, False]
    assert bottom.gap_mask.tolist() == top.gap_mask.tolist()


def test_envelopes_empty_mask():
    with pytest.raises(EmptyMask):
        extract_envelopes(BinaryImage(np.zeros((3, 3), bool)))


@given(arrays(bool, st.tuples(st.integers(1, 15), st.integers(1, 15))))
def test_envelope_ordering(mask):
    if not mask.any():
        return
    top, bottom = extract_envelopes(BinaryImage(mask))
    ok = ~top.gap_mask
    assert (top.values[ok] <= bottom.values[ok]).all()
    for c in np.flatnonzero(ok):
        rows = np.flatnonzero(mask[:, c])
        assert top.values[c] == rows.min() and bottom.values[c] == rows.max()


def test_fill_gaps_examples():
    assert fill_gaps(env([10, None, 20]), "linear_interpolate").values.tolist() == [10, 15, 20]
    assert fill_gaps(env([10, None, 20]), "repeat_previous").values.tolist() == [10, 10, 20]
    assert fill_gaps(env([None, None, 8]), "repeat_previous").values.tolist() == [8, 8, 8]
    assert fill_gaps(env([None, 4, None, None]), "linear_interpolate").values.tolist() == [4, 4, 4, 4]
    assert not fill_gaps(env([None, 1])).gap_mask.any()


def test_fill_gaps_errors():
    with pytest.raises(AllGaps):
        fill_gaps(env([None, None]))
    with pytest.raises(InputError):
        fill_gaps(env([1, 2]), "spline")


@given(st.lists(st.floats(0, 500), min_size=1, max_size=30),
       st.sampled_from(["repeat_previous", "linear_interpolate"]))
def test_fill_gaps_identity_without_gaps(values, strategy):
    e = env(values)
    assert fill_gaps(e, strategy) == e


def test_average_examples():
    assert average_envelopes(env([4, 4]), env([4, 4])).samples.tolist() == [4.0, 4.0]
    assert average_envelopes(env([3]), env([7])).samples.tolist() == [5.0]
    assert average_envelopes(env([2, 6]), env([4, 6])).samples.tolist() == [3.0, 6.0]
    with pytest.raises(WidthMismatch):
        average_envelopes(env([1, 2]), env([1]))


@given(st.lists(st.tuples(st.integers(0, 99), st.integers(0, 99)), min_size=1, max_size=30))
def test_average_between_envelopes(pairs):
    top = env([min(a, b) for a, b in pairs])
    bottom = env([max(a, b) for a, b in pairs])
    s = average_envelopes(top, bottom).samples
    assert (s >= top.values).all() and (s <= bottom.values).all()


def test_trim_gap_margins():
    top, bottom, offset = trim_gap_margins(env([None, 3, None, 5, None]), env([None, 4, None, 6, None]))
    assert offset == 1
    assert top.gap_mask.tolist() == [False, True, False]
    assert bottom.values[2] == 6


def test_calibration_defaults():
    p = CalibrationParams(trace_height_px=350, baseline_row_px=200)
    assert p.mm_per_px == pytest.approx(0.1)
    sig = calibrate(PixelTrace([100.0, 200.0]), p)
    assert sig.samples[0] == pytest.approx(1.0)
    assert sig.samples[1] == 0.0
    assert sig.sample_period == pytest.approx(0.004)
    assert sig.fs == pytest.approx(250.0)


def test_calibration_doubling_height():
    trace = PixelTrace([50.0, 150.0, 120.0])
    a = calibrate(trace, CalibrationParams(350, baseline_row_px=120))
    b = calibrate(trace, CalibrationParams(700, baseline_row_px=120))
    assert np.allclose(b.samples, a.samples / 2)
    assert b.sample_period == pytest.approx(a.sample_period / 2)


def test_calibration_median_baseline_recorded():
    sig = calibrate(PixelTrace([10.0, 20.0, 20.0, 20.0, 5.0]), CalibrationParams(350))
    assert sig.calibration["baseline_row_px"] == 20.0
    assert sig.samples[1] == 0.0


@given(st.floats(1, 100), st.floats(-5, 5))
def test_calibration_affine(d, k):
    base = 200.0
    p = CalibrationParams(350, baseline_row_px=base)
    one = calibrate(PixelTrace([base - d, base]), p).samples[0]
    many = calibrate(PixelTrace([base - k * d, base]), p).samples[0]
    assert many == pytest.approx(k * one, abs=1e-9)


@pytest.mark.parametrize("kwargs", [{"trace_height_px": 0}, {"trace_height_px": 350, "gain_mm_per_mV": -1},
                                    {"trace_height_px": 350, "paper_speed_mm_per_s": 0}])
def test_calibration_invalid(kwargs):
    with pytest.raises(InvalidParams):
        CalibrationParams(**kwargs)


def test_calibrate_needs_two_columns():
    with pytest.raises(InputError):
        calibrate(PixelTrace([1.0]), CalibrationParams(350))


@given(st.integers(0, 10_000))
def test_pixel_fidelity_one_pixel_stroke(seed):
    rng = np.random.default_rng(seed)
    h, w = 60, 80
    x = np.arange(w)
    curve = 30 + 12 * np.sin(x / rng.uniform(3, 12) + rng.uniform(0, 6)) + rng.uniform(-3, 3)
    rows = np.clip(np.round(curve).astype(int), 0, h - 1)
    mask = np.zeros((h, w), bool)
    mask[rows, x] = True
    top, bottom = extract_envelopes(BinaryImage(mask))
    trace = average_envelopes(fill_gaps(top), fill_gaps(bottom), height=h)
    assert np.abs(trace.samples - curve).max() <= 1.0


def test_signal_json_round_trip_and_schema():
    sig = CalibratedSignal([0.1234, -0.5], 0.004, "II", "img.png", {"trace_height_px": 350})
    obj = json.loads(sig.to_json())
    assert sorted(obj) == ["calibration", "lead_label", "sample_period_s", "samples_mV",
                           "schema_version", "source_id"]
    assert obj["samples_mV"] == [0.123, -0.5]
    back = CalibratedSignal.from_json(sig.to_json())
    assert back.to_json() == sig.to_json()
    del obj["samples_mV"]
    with pytest.raises(SchemaError):
        CalibratedSignal.from_dict(obj)
    with pytest.raises(SchemaError):
        CalibratedSignal.from_json("{nope")


def test_signal_invariants():
    with pytest.raises(InputError):
        CalibratedSignal([], 0.004)
    with pytest.raises(InputError):
        CalibratedSignal([1.0], 0.0)
    with pytest.raises(InputError):
        CalibratedSignal([NAN], 0.004)


def test_signal_csv():
    text = CalibratedSignal([1.5, -2.0], 0.5).to_csv()
    assert text == "time_s,amplitude_mV\n0.0,1.5\n0.5,-2.0\n"
    assert "\r" not in text
