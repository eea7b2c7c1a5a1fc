"""Synthetic study models - findings, rendered image and report."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NO_FINDING = "no finding"

# Five synthetic abnormality tokens plus "no finding". Not medical terms.
FINDING_CLASSES: tuple[str, ...] = (NO_FINDING, "atrex", "bolvine", "corda", "dulmic", "effra")
ABNORMAL_CLASSES: tuple[str, ...] = FINDING_CLASSES[1:]

SIDES: tuple[str, ...] = ("left", "right")
LEVELS: tuple[str, ...] = ("upper", "lower")
EXTENTS: tuple[str, ...] = ("small", "large")


@dataclass(frozen=True)
class FindingSpec:
    """One finding: class, quadrant (side, level) and extent."""

    class_id: str
    location: tuple[str, str] | None = None
    extent: str | None = None
    present: bool = True

    def __post_init__(self) -> None:
        if self.class_id not in FINDING_CLASSES:
            raise ValueError(f"Unknown finding class: {self.class_id!r}")
        if self.class_id == NO_FINDING and self.present:
            raise ValueError("'no finding' cannot be present")
        if self.present:
            if self.location is None or self.extent is None:
                raise ValueError(f"Present finding {self.class_id!r} needs location and extent")
            side, level = self.location
            if side not in SIDES or level not in LEVELS:
                raise ValueError(f"Invalid location: {self.location!r}")
            if self.extent not in EXTENTS:
                raise ValueError(f"Invalid extent: {self.extent!r}")
        elif self.location is not None or self.extent is not None:
            raise ValueError("Absent finding must not carry location or extent")

    @classmethod
    def absent(cls) -> FindingSpec:
        return cls(NO_FINDING, present=False)

    @property
    def quadrant(self) -> tuple[int, int]:
        """(row half, column half): upper=0/lower=1, left=0/right=1."""
        if self.location is None:
            raise ValueError("Absent finding has no quadrant")
        side, level = self.location
        return LEVELS.index(level), SIDES.index(side)

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "location": list(self.location) if self.location else None,
            "extent": self.extent,
            "present": self.present,
        }

    @classmethod
    def from_dict(cls, data: dict) -> FindingSpec:
        location = data.get("location")
        return cls(
            class_id=data["class_id"],
            location=tuple(location) if location else None,
            extent=data.get("extent"),
            present=data.get("present", True),
        )


def present_findings(specs: list[FindingSpec]) -> list[FindingSpec]:
    return [s for s in specs if s.present]


@dataclass
class SyntheticStudy:
    """A paired sample: H x W image in [0, 1], report sentences and ground truth."""

    study_id: str
    image: np.ndarray
    report: list[str]
    findings: list[FindingSpec] = field(default_factory=list)

    @property
    def label_classes(self) -> frozenset[str]:
        """Set of class ids; {"no finding"} when nothing is present."""
        present = {f.class_id for f in present_findings(self.findings)}
        return frozenset(present) if present else frozenset({NO_FINDING})

    @property
    def primary_class(self) -> str:
        present = present_findings(self.findings)
        return present[0].class_id if present else NO_FINDING

    @property
    def is_normal(self) -> bool:
        return not present_findings(self.findings)

    def with_report(self, report: list[str]) -> SyntheticStudy:
        """Copy sharing the image, with a different report."""
        return SyntheticStudy(self.study_id, self.image, list(report), list(self.findings))

    def to_dict(self) -> dict:
        """Serialize to dictionary (image as row-major floats plus dims)."""
        height, width = self.image.shape
        return {
            "study_id": self.study_id,
            "image": {"dims": [height, width], "data": self.image.ravel().tolist()},
            "report": list(self.report),
            "findings": [f.to_dict() for f in self.findings],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SyntheticStudy:
        dims = data["image"]["dims"]
        image = np.asarray(data["image"]["data"], dtype=np.float64).reshape(dims)
        return cls(
            study_id=data["study_id"],
            image=image,
            report=list(data["report"]),
            findings=[FindingSpec.from_dict(f) for f in data.get("findings", [])],
        )
