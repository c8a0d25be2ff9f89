"""Run the full digitise-and-analyse pipeline over a synthetic corpus and
score it against the generator's ground truth."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..analysis import analyze
from ..errors import EcgScanError, InputError, InvalidSpec
from ..pipeline import PipelineConfig, digitize
from .matching import DEFAULT_TOLERANCES, LABELS, FeaturePointSet, match_points
from .synthetic import SyntheticTraceSpec, render_synthetic_trace


@dataclass
class CorpusItem:
    spec: SyntheticTraceSpec
    seed: int = 0
    name: str = ""

    def to_dict(self):
        return {"name": self.name, "seed": self.seed, "spec": self.spec.to_dict()}


def load_corpus(obj):
    """Parse a corpus: a JSON list of ``{"spec": {...}, "seed": n, "name": ...}``."""
    if isinstance(obj, (str, bytes)):
        try:
            obj = json.loads(obj)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"corpus is not valid JSON: {exc}") from exc
    if isinstance(obj, dict):
        obj = [obj]
    if not isinstance(obj, list) or not obj:
        raise InvalidSpec("corpus must be a non-empty JSON list")
    items = []
    for k, entry in enumerate(obj):
        if not isinstance(entry, dict):
            raise InvalidSpec(f"corpus entry {k} is not an object")
        seed = entry.get("seed", k)
        if not isinstance(seed, int) or seed < 0:
            raise InvalidSpec(f"corpus entry {k}: seed must be a non-negative integer")
        spec = SyntheticTraceSpec.from_dict(entry.get("spec", {}))
        items.append(CorpusItem(spec, seed, str(entry.get("name", f"item{k:03d}"))))
    return items


@dataclass
class EvaluationConfig:
    deskew: bool = True
    rmse_bound_mV: float = 0.1
    max_lag: int = 3
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    pipeline: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.rmse_bound_mV < 0:
            raise InputError("rmse_bound_mV must be >= 0")
        if self.max_lag < 0:
            raise InputError("max_lag must be >= 0")


def aligned_rmse(extracted, truth, max_lag=3):
    """Smallest RMSE over column shifts in ``[-max_lag, max_lag]``.

    Returns ``(rmse, shift)`` where extracted sample ``i`` lines up with
    truth sample ``i + shift``.
    """
    a, b = np.asarray(extracted), np.asarray(truth)
    best = (np.inf, 0)
    for shift in range(-max_lag, max_lag + 1):
        lo = max(0, -shift)
        hi = min(a.size, b.size - shift)
        if hi - lo < max(2, min(a.size, b.size) // 2):
            continue
        err = a[lo:hi] - b[lo + shift:hi + shift]
        r = float(np.sqrt(np.mean(err ** 2)))
        if r < best[0]:
            best = (r, shift)
    return best


def evaluate_item(item, config=None):
    config = config or EvaluationConfig()
    out = {"name": item.name, "seed": item.seed, "success": False, "rmse_mV": None,
           "error": None, "stage": None, "counts": {}}
    try:
        image, truth = render_synthetic_trace(item.spec, item.seed, source_id=item.name)
        pipe = PipelineConfig.from_dict({**config.pipeline, "deskew": config.deskew,
                                         "trace_height_px": truth.trace_height_px})
        result = digitize(image, pipe, source_id=item.name)
        rmse, shift = aligned_rmse(result.signal.samples, truth.signal.samples, config.max_lag)
        out["rmse_mV"] = rmse
        out["skew_estimate_deg"] = result.skew_angle
        out["skew_truth_deg"] = truth.skew_angle
        out["success"] = bool(rmse < config.rmse_bound_mV)

        report = analyze(result.signal, pipe.filter_chain, pipe.pan_tompkins)
        sp = result.signal.sample_period
        offset = shift * sp
        detected = FeaturePointSet(
            [(t + offset, lab) for t, lab in FeaturePointSet.from_fiducials(report.fiducials, sp).points
             if t + offset >= 0],
            "detected",
        )
        m = match_points(detected, truth.features, config.tolerances)
        for lab in LABELS:
            out["counts"][lab] = {
                "matched": sum(1 for i, _ in m.pairs if detected.points[i][1] == lab),
                "detected": sum(1 for p in detected.points if p[1] == lab),
                "truth": sum(1 for p in truth.features.points if p[1] == lab),
            }
        out["heart_rate_bpm"] = report.heart_rate_bpm
        out["heart_rate_truth_bpm"] = item.spec.waveform.heart_rate_bpm
    except EcgScanError as exc:
        out["error"] = str(exc)
        out["stage"] = exc.stage
    return out


def _summary(values):
    if not values:
        return None
    arr = np.asarray(values)
    return {"min": float(arr.min()), "median": float(np.median(arr)),
            "mean": float(arr.mean()), "max": float(arr.max())}


def _pr(matched, detected, truth):
    flags = []
    if detected == 0:
        flags.append("vacuous_precision")
    if truth == 0:
        flags.append("vacuous_recall")
    return {"precision": matched / detected if detected else 1.0,
            "recall": matched / truth if truth else 1.0, "matched": matched,
            "detected": detected, "truth": truth, "flags": flags}


def _evaluate_star(args):
    return evaluate_item(*args)


def evaluate_pipeline(corpus, config=None, n_jobs=1):
    """Evaluate every corpus item; failures are reported, never raised."""
    config = config or EvaluationConfig()
    if not corpus:
        raise InputError("corpus is empty")
    jobs = [(item, config) for item in corpus]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            items = list(pool.map(_evaluate_star, jobs))
    else:
        items = [evaluate_item(*job) for job in jobs]

    totals = {lab: [0, 0, 0] for lab in LABELS}
    for it in items:
        for lab, c in it["counts"].items():
            totals[lab][0] += c["matched"]
            totals[lab][1] += c["detected"]
            totals[lab][2] += c["truth"]
    per_label = {lab: _pr(*totals[lab]) for lab in LABELS}
    waves = [sum(totals[lab][k] for lab in "PQST") for k in range(3)]
    overall = [sum(totals[lab][k] for lab in LABELS) for k in range(3)]
    n_ok = sum(1 for it in items if it["success"])
    return {
        "n_items": len(items),
        "n_success": n_ok,
        "success_rate": n_ok / len(items),
        "rmse_bound_mV": config.rmse_bound_mV,
        "rmse_mV": _summary([it["rmse_mV"] for it in items if it["rmse_mV"] is not None]),
        "per_label": per_label,
        "pqst": _pr(*waves),
        "overall": _pr(*overall),
        "items": items,
    }


def format_report(report):
    lines = [
        f"items: {report['n_items']}  success: {report['n_success']}/{report['n_items']}"
        f"  (RMSE < {report['rmse_bound_mV']:g} mV)",
    ]
    if report["rmse_mV"]:
        r = report["rmse_mV"]
        lines.append(f"RMSE mV  min {r['min']:.4f}  median {r['median']:.4f}"
                     f"  mean {r['mean']:.4f}  max {r['max']:.4f}")
    lines.append(f"{'label':<6}{'precision':>10}{'recall':>10}{'matched':>9}{'detected':>9}{'truth':>7}")
    for lab, row in list(report["per_label"].items()) + [("PQST", report["pqst"])]:
        lines.append(f"{lab:<6}{row['precision']:>10.4f}{row['recall']:>10.4f}"
                     f"{row['matched']:>9}{row['detected']:>9}{row['truth']:>7}")
    failed = [it for it in report["items"] if not it["success"]]
    for it in failed:
        why = it["error"] or f"RMSE {it['rmse_mV']:.3f} mV"
        lines.append(f"FAILED {it['name']}: {why}")
    return "\n".join(lines)
