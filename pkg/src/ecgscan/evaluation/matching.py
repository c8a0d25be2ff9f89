"""Tolerance-based matching of detected fiducials against ground truth, and
precision/recall over the matches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import InputError

LABELS = ("R", "P", "Q", "S", "T")
DEFAULT_TOLERANCES = {"R": 0.050, "P": 0.080, "Q": 0.080, "S": 0.080, "T": 0.080}


@dataclass(frozen=True)
class FeaturePointSet:
    """Labelled fiducial times in seconds, kept sorted by (label, time)."""

    points: tuple
    source: str = "detected"

    def __init__(self, points, source="detected"):
        pts = []
        for t, label in points:
            if label not in LABELS:
                raise InputError(f"unknown feature label {label!r}")
            if t < 0:
                raise InputError("feature times must be non-negative")
            pts.append((float(t), label))
        pts.sort(key=lambda p: (LABELS.index(p[1]), p[0]))
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "source", source)

    def __len__(self):
        return len(self.points)

    def times(self, label):
        return np.array([t for t, lab in self.points if lab == label])

    def labels(self):
        return sorted({lab for _, lab in self.points}, key=LABELS.index)

    def to_dict(self):
        return {"source": self.source, "points": [[t, lab] for t, lab in self.points]}

    @classmethod
    def from_dict(cls, obj):
        return cls([tuple(p) for p in obj["points"]], obj.get("source", "detected"))

    @classmethod
    def from_fiducials(cls, beats, sample_period):
        pts = []
        for b in beats:
            for label, idx in (("P", b.p_idx), ("Q", b.q_idx), ("R", b.r_idx),
                               ("S", b.s_idx), ("T", b.t_idx)):
                if idx is not None:
                    pts.append((idx * sample_period, label))
        return cls(pts, "detected")


@dataclass
class Matching:
    """One-to-one pairs of indices into ``detected.points`` and ``truth.points``."""

    pairs: list = field(default_factory=list)
    unmatched_detected: list = field(default_factory=list)
    unmatched_truth: list = field(default_factory=list)
    tolerance: float = 0.05

    @property
    def n_matched(self):
        return len(self.pairs)

    @property
    def n_detected(self):
        return len(self.pairs) + len(self.unmatched_detected)

    @property
    def n_truth(self):
        return len(self.pairs) + len(self.unmatched_truth)


def _match_greedy(det, tru, tol):
    cands = []
    for i, a in enumerate(det):
        for j, b in enumerate(tru):
            d = abs(a - b)
            if d <= tol:
                cands.append((d, i, j))
    cands.sort()
    used_d, used_t, pairs = set(), set(), []
    for _, i, j in cands:
        if i not in used_d and j not in used_t:
            used_d.add(i)
            used_t.add(j)
            pairs.append((i, j))
    return pairs


def _match_optimal(det, tru, tol):
    if len(det) == 0 or len(tru) == 0:
        return []
    dist = np.abs(np.subtract.outer(det, tru))
    allowed = dist <= tol
    if not allowed.any():
        return []
    # any in-tolerance pair costs less than every distance sum, so the
    # solver first maximises the number of pairs, then minimises distance
    penalty = float(dist[allowed].sum()) + 1.0
    cost = np.where(allowed, dist, penalty * (min(len(det), len(tru)) + 1))
    rows, cols = linear_sum_assignment(cost)
    return [(int(i), int(j)) for i, j in zip(rows, cols) if allowed[i, j]]


def match_points(detected, truth, tolerance, method="optimal"):
    """Pair detections with truth points of the same label within ``tolerance``.

    ``tolerance`` is a number of seconds or a mapping label -> seconds.
    ``method="optimal"`` maximises the number of pairs and then minimises the
    summed time error; ``method="greedy"`` takes pairs in increasing distance
    order, which can miss pairs when a detection sits between two truths.
    """
    if method not in ("optimal", "greedy"):
        raise InputError("method must be 'optimal' or 'greedy'")
    tols = tolerance if isinstance(tolerance, dict) else {lab: tolerance for lab in LABELS}
    if any(t <= 0 for t in tols.values()):
        raise InputError("tolerance must be positive")
    solver = _match_optimal if method == "optimal" else _match_greedy

    d_index = {lab: [k for k, p in enumerate(detected.points) if p[1] == lab] for lab in LABELS}
    t_index = {lab: [k for k, p in enumerate(truth.points) if p[1] == lab] for lab in LABELS}
    pairs = []
    for lab in LABELS:
        di, ti = d_index[lab], t_index[lab]
        if not di or not ti:
            continue
        det = np.array([detected.points[k][0] for k in di])
        tru = np.array([truth.points[k][0] for k in ti])
        pairs.extend((di[i], ti[j]) for i, j in solver(det, tru, tols[lab]))
    pairs.sort()
    matched_d = {i for i, _ in pairs}
    matched_t = {j for _, j in pairs}
    return Matching(
        pairs=pairs,
        unmatched_detected=[k for k in range(len(detected)) if k not in matched_d],
        unmatched_truth=[k for k in range(len(truth)) if k not in matched_t],
        tolerance=tolerance,
    )


def precision(m):
    """Matched detections over all detections; 1.0 when nothing was detected."""
    if m.n_detected == 0:
        return 1.0
    return m.n_matched / m.n_detected


def recall(m):
    """Matched truth points over all truth points; 1.0 when truth is empty."""
    if m.n_truth == 0:
        return 1.0
    return m.n_matched / m.n_truth


@dataclass
class EvalResult:
    precision: float
    recall: float
    per_label: dict
    counts: tuple

    def to_dict(self):
        return {
            "precision": self.precision,
            "recall": self.recall,
            "per_label": {k: {"precision": p, "recall": r} for k, (p, r) in self.per_label.items()},
            "counts": {"matched": self.counts[0], "detected": self.counts[1], "truth": self.counts[2]},
        }


def evaluate_points(detected, truth, tolerance=None, method="optimal"):
    tolerance = DEFAULT_TOLERANCES if tolerance is None else tolerance
    m = match_points(detected, truth, tolerance, method)
    per_label = {}
    for lab in LABELS:
        d = [k for k, p in enumerate(detected.points) if p[1] == lab]
        t = [k for k, p in enumerate(truth.points) if p[1] == lab]
        if not d and not t:
            continue
        sub = Matching(
            pairs=[p for p in m.pairs if detected.points[p[0]][1] == lab],
            unmatched_detected=[k for k in m.unmatched_detected if k in set(d)],
            unmatched_truth=[k for k in m.unmatched_truth if k in set(t)],
        )
        per_label[lab] = (precision(sub), recall(sub))
    return EvalResult(precision(m), recall(m), per_label, (m.n_matched, m.n_detected, m.n_truth)), m
