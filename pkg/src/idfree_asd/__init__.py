"""Evaluation toolkit for anomalous sound detection without machine identity.

Scores each test recording against every machine's scorer, aggregates by
minimum, and quantifies what identity-free operation costs: normalized
detection degradation alongside implicit machine identification accuracy.
Includes exact AUC/pAUC metrics, reference-based scorers, a synthetic
cluster simulator, and a CLI with reproducible file formats.
"""

from .io import TOOL_VERSION as __version__
from .metrics import (
    AVERAGING_MODES,
    IdAccuracy,
    LabeledScores,
    MetricError,
    MetricPair,
    NormalizedDegradation,
    aggregate,
    auc,
    delta_norm,
    normalize_id_accuracy,
    pauc,
    pauc_raw,
    roc_points,
)
from .protocol import (
    EvalConfig,
    EvalReport,
    IdentificationStats,
    MachineMetrics,
    MergedTestSet,
    ModeResult,
    ProtocolError,
    Recording,
    ScoreMatrix,
    aggregate_score,
    evaluate_known,
    evaluate_unknown,
    full_report,
    identify,
    merge_test_sets,
    misid_probability,
)
from .scorers import (
    NormalizerSpec,
    ReferenceSet,
    ScorerError,
    ScorerSpec,
    build_score_matrix,
    normalize,
    score,
    scoring_function,
)
from .simulate import (
    DEFAULT_REPEATS,
    DEFAULT_SCORER,
    DEFAULT_SEPARATIONS,
    SimConfig,
    SimError,
    SweepPoint,
    SweepResult,
    generate,
    run_point,
    simplex_centers,
    sweep,
)

__all__ = [
    "__version__",
    "AVERAGING_MODES",
    "IdAccuracy",
    "LabeledScores",
    "MetricError",
    "MetricPair",
    "NormalizedDegradation",
    "aggregate",
    "auc",
    "delta_norm",
    "normalize_id_accuracy",
    "pauc",
    "pauc_raw",
    "roc_points",
    "EvalConfig",
    "EvalReport",
    "IdentificationStats",
    "MachineMetrics",
    "MergedTestSet",
    "ModeResult",
    "ProtocolError",
    "Recording",
    "ScoreMatrix",
    "aggregate_score",
    "evaluate_known",
    "evaluate_unknown",
    "full_report",
    "identify",
    "merge_test_sets",
    "misid_probability",
    "NormalizerSpec",
    "ReferenceSet",
    "ScorerError",
    "ScorerSpec",
    "build_score_matrix",
    "normalize",
    "score",
    "scoring_function",
    "DEFAULT_REPEATS",
    "DEFAULT_SCORER",
    "DEFAULT_SEPARATIONS",
    "SimConfig",
    "SimError",
    "SweepPoint",
    "SweepResult",
    "generate",
    "run_point",
    "simplex_centers",
    "sweep",
]
