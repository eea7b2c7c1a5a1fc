"""Data models for xvl."""

from xvl.models.error_record import INJECTED_TYPES, ErrorRecord, ErrorType
from xvl.models.metric_report import MetricReport
from xvl.models.run import RunManifest, StepRecord
from xvl.models.scores import (
    AttentionHeatmap,
    CorrectionResult,
    DetectionScore,
    Substitution,
)
from xvl.models.study import (
    ABNORMAL_CLASSES,
    EXTENTS,
    FINDING_CLASSES,
    LEVELS,
    NO_FINDING,
    SIDES,
    FindingSpec,
    SyntheticStudy,
)
from xvl.models.text import MaskedBatch, TokenizedText
from xvl.models.vocabulary import IGNORE_INDEX, SPECIAL_TOKENS, Vocabulary

__all__ = [
    # Studies
    "FindingSpec",
    "SyntheticStudy",
    "FINDING_CLASSES",
    "ABNORMAL_CLASSES",
    "NO_FINDING",
    "SIDES",
    "LEVELS",
    "EXTENTS",
    # Text
    "Vocabulary",
    "SPECIAL_TOKENS",
    "IGNORE_INDEX",
    "TokenizedText",
    "MaskedBatch",
    # Errors
    "ErrorRecord",
    "ErrorType",
    "INJECTED_TYPES",
    # Evaluation
    "MetricReport",
    "DetectionScore",
    "Substitution",
    "CorrectionResult",
    "AttentionHeatmap",
    # Runs
    "RunManifest",
    "StepRecord",
]
