"""ErrorRecord model - provenance of an injected report corruption."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class ErrorType(str, Enum):
    """Simulated human error types."""

    MISMATCH = "mismatch"
    LOCATION = "location"
    EXTENT = "extent"
    FALSE_NEGATIVE = "false_negative"
    FALSE_POSITIVE = "false_positive"
    NONE = "none"


INJECTED_TYPES: tuple[ErrorType, ...] = tuple(t for t in ErrorType if t is not ErrorType.NONE)


@dataclass
class ErrorRecord:
    """What the error simulator did to one report."""

    error_type: ErrorType
    original: list[str]
    corrupted: list[str]
    positions: list[int] = field(default_factory=list)
    source_study_id: str | None = None
    inapplicable: bool = False

    def __post_init__(self) -> None:
        if (self.error_type is ErrorType.NONE) != (self.corrupted == self.original):
            raise ValueError("error_type none must coincide with an unchanged report")
        if self.error_type in (ErrorType.LOCATION, ErrorType.EXTENT) and not self.positions:
            raise ValueError(f"{self.error_type.value} error must record an edited position")

    @property
    def is_error(self) -> bool:
        return self.error_type is not ErrorType.NONE

    def to_dict(self) -> dict:
        return {
            "error_type": self.error_type.value,
            "original": list(self.original),
            "corrupted": list(self.corrupted),
            "positions": list(self.positions),
            "source_study_id": self.source_study_id,
            "inapplicable": self.inapplicable,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ErrorRecord:
        return cls(
            error_type=ErrorType(data["error_type"]),
            original=list(data["original"]),
            corrupted=list(data["corrupted"]),
            positions=list(data.get("positions", [])),
            source_study_id=data.get("source_study_id"),
            inapplicable=data.get("inapplicable", False),
        )
