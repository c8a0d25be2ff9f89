"""scikit-learn style wrappers around the digitisation and analysis stages.

The stages themselves are stateless, so ``fit`` only validates parameters;
the wrappers exist so the pipeline plugs into ``sklearn.pipeline.Pipeline``,
``clone`` and ``get_params``/``set_params`` based tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import analysis
from ._validation import check_images, check_signals
from .evaluation.matching import FeaturePointSet, match_points
from .imaging import CropRect
from .pipeline import PipelineConfig, digitize


class TraceDigitizer(TransformerMixin, BaseEstimator):
    """Photographs in, :class:`CalibratedSignal` list out."""

    def __init__(self, deskew=True, skew_half_range=10.0, skew_step=0.25, crop=None, threshold=None,
                 se_length=4, angle_step=15.0, gap_strategy="repeat_previous", trim_margins=True,
                 trace_height_px=None, physical_height_cm=3.5, gain_mm_per_mV=10.0,
                 paper_speed_mm_per_s=25.0, baseline_row_px=None, lead_label="II"):
        self.deskew = deskew
        self.skew_half_range = skew_half_range
        self.skew_step = skew_step
        self.crop = crop
        self.threshold = threshold
        self.se_length = se_length
        self.angle_step = angle_step
        self.gap_strategy = gap_strategy
        self.trim_margins = trim_margins
        self.trace_height_px = trace_height_px
        self.physical_height_cm = physical_height_cm
        self.gain_mm_per_mV = gain_mm_per_mV
        self.paper_speed_mm_per_s = paper_speed_mm_per_s
        self.baseline_row_px = baseline_row_px
        self.lead_label = lead_label

    def _config(self):
        params = self.get_params()
        crop = params.pop("crop")
        if crop is not None and not isinstance(crop, CropRect):
            crop = CropRect(*crop)
        return PipelineConfig(crop=crop, **params).validate()

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def digitize(self, X):
        """Full per-image results (signal, trace, skew, threshold, mask)."""
        check_is_fitted(self, "config_")
        return [digitize(img, self.config_) for img in check_images(X)]

    def transform(self, X):
        return [r.signal for r in self.digitize(X)]


class RPeakDetector(BaseEstimator):
    """Pan-Tompkins R-peak detector; ``predict`` returns one RPeakSet per signal."""

    def __init__(self, band_low_hz=5.0, band_high_hz=15.0, integration_window_s=0.150,
                 refractory_s=0.200, searchback_factor=1.66, snap_window_s=0.050, tolerance_s=0.050):
        self.band_low_hz = band_low_hz
        self.band_high_hz = band_high_hz
        self.integration_window_s = integration_window_s
        self.refractory_s = refractory_s
        self.searchback_factor = searchback_factor
        self.snap_window_s = snap_window_s
        self.tolerance_s = tolerance_s

    def fit(self, X=None, y=None):
        params = self.get_params()
        params.pop("tolerance_s")
        self.config_ = analysis.PanTompkinsConfig(**params)
        return self

    def predict(self, X):
        check_is_fitted(self, "config_")
        return [analysis.pan_tompkins(s, self.config_) for s in check_signals(X)]

    def score(self, X, y):
        """Mean F1 of detected R-peaks against true R times (seconds), one array per signal."""
        scores = []
        for peaks, truth in zip(self.predict(X), y):
            det = FeaturePointSet([(t, "R") for t in peaks.times])
            tru = FeaturePointSet([(t, "R") for t in np.asarray(truth, dtype=float)])
            m = match_points(det, tru, self.tolerance_s)
            denom = m.n_detected + m.n_truth
            scores.append(1.0 if denom == 0 else 2.0 * m.n_matched / denom)
        return float(np.mean(scores))


class EcgAnalyzer(TransformerMixin, BaseEstimator):
    """Signals in, :class:`AnalysisReport` list out.

    ``filter_chain=None`` selects the default Savitzky-Golay smoother for
    each signal's sampling rate.  Signals with too few beats yield their
    partial report instead of raising when ``strict=False``.
    """

    def __init__(self, filter_chain=None, detector=None, prominence_floor_mV=0.05, strict=True):
        self.filter_chain = filter_chain
        self.detector = detector
        self.prominence_floor_mV = prominence_floor_mV
        self.strict = strict

    def fit(self, X=None, y=None):
        detector = self.detector if self.detector is not None else RPeakDetector()
        self.detector_ = detector.fit() if not hasattr(detector, "config_") else detector
        self.delineation_ = analysis.DelineationConfig(prominence_floor_mV=self.prominence_floor_mV)
        return self

    def transform(self, X):
        check_is_fitted(self, "detector_")
        reports = []
        for sig in check_signals(X):
            try:
                reports.append(analysis.analyze(sig, self.filter_chain, self.detector_.config_,
                                                self.delineation_))
            except analysis.TooFewPeaks as exc:
                if self.strict:
                    raise
                reports.append(exc.report)
        return reports
