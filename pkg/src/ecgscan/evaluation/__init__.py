from .matching import (
    DEFAULT_TOLERANCES,
    LABELS,
    EvalResult,
    FeaturePointSet,
    Matching,
    evaluate_points,
    match_points,
    precision,
    recall,
)
from .synthetic import (
    Distortions,
    GroundTruth,
    PaperParams,
    SyntheticTraceSpec,
    WaveformParams,
    render_synthetic_trace,
    synthesize_ecg,
)
from .corpus import (
    CorpusItem,
    EvaluationConfig,
    aligned_rmse,
    evaluate_item,
    evaluate_pipeline,
    format_report,
    load_corpus,
)
