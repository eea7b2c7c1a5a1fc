"""Zero-shot output models - scores, substitutions and attention heatmaps."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

ScoreMode = Literal["simple", "detailed", "error"]


@dataclass
class DetectionScore:
    """One zero-shot score for a study."""

    study_id: str
    score: float
    mode: ScoreMode
    subject: str = ""
    label: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_dict(self) -> dict:
        return {
            "study_id": self.study_id,
            "class": self.subject,
            "mode": self.mode,
            "score": self.score,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: dict) -> DetectionScore:
        return cls(
            study_id=data["study_id"],
            score=data["score"],
            mode=data["mode"],
            subject=data.get("class", ""),
            label=data.get("label"),
        )


@dataclass
class Substitution:
    """One word replaced by zero-shot correction."""

    position: int
    old: str
    new: str
    prob: float

    def to_dict(self) -> dict:
        return {"position": self.position, "old": self.old, "new": self.new, "prob": self.prob}


@dataclass
class CorrectionResult:
    report: list[str]
    substitutions: list[Substitution] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return bool(self.substitutions)


@dataclass
class AttentionHeatmap:
    """Per word: nonnegative relevance over the image, upsampled to image size."""

    words: list[str]
    positions: list[int]
    maps: np.ndarray  # (num_words, H, W)
    layer: int = -1

    def __post_init__(self) -> None:
        if self.maps.ndim != 3 or self.maps.shape[0] != len(self.words):
            raise ValueError("maps must be (num_words, H, W)")
        if not np.all(np.isfinite(self.maps)) or np.any(self.maps < 0):
            raise ValueError("heatmap values must be finite and nonnegative")

    def for_word(self, word: str) -> np.ndarray:
        return self.maps[self.words.index(word)]
