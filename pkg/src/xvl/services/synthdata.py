"""Deterministic synthetic image-report corpus.

Each study renders its findings as bright geometric markers over a dim noise
background, one marker per finding in the quadrant named by its location, and
describes each finding with one templated sentence.
"""

import re

import numpy as np

from xvl.models.study import (
    ABNORMAL_CLASSES,
    EXTENTS,
    FINDING_CLASSES,
    LEVELS,
    NO_FINDING,
    SIDES,
    FindingSpec,
    SyntheticStudy,
    present_findings,
)
from xvl.utils.errors import DataError
from xvl.utils.hashing import compute_record_hash

BACKGROUND_MAX = 0.2
MARKER_MIN = 0.7
MARKER_MAX = 1.0
MARKER_THRESHOLD = 0.5
DEFAULT_IMAGE_SIZE = 32

NEGATION_SENTENCE = "No evidence of abnormality."
SENTENCE_TEMPLATE = "There is {extent} {class_id} in the {side} {level} zone."

_SENTENCE_RE = re.compile(
    r"^there is (?P<extent>\w+) (?P<class_id>\w+) in the (?P<side>\w+) (?P<level>\w+) zone\.$",
    re.IGNORECASE,
)

# Marker shape per abnormal class.
_SHAPES = {
    "atrex": "square",
    "bolvine": "disk",
    "corda": "cross",
    "dulmic": "frame",
    "effra": "band",
}


def marker_radius(extent: str, image_size: int = DEFAULT_IMAGE_SIZE) -> int:
    """Half-width of a marker; 2/5 pixels at 32x32, scaled with the image."""
    small = max(1, round(2 * image_size / 32))
    if extent == "small":
        return small
    return max(small + 1, round(5 * image_size / 32))


def _marker_mask(class_id: str, radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    width = max(1, radius // 3)
    shape = _SHAPES[class_id]
    if shape == "square":
        return np.ones_like(dy, dtype=bool)
    if shape == "disk":
        return dy**2 + dx**2 <= radius**2
    if shape == "cross":
        return (np.abs(dy) < width) | (np.abs(dx) < width)
    if shape == "frame":
        return np.maximum(np.abs(dy), np.abs(dx)) > radius - width
    return np.abs(dy - dx) <= width


def _check_consistent(specs: list[FindingSpec]) -> list[FindingSpec]:
    present = present_findings(specs)
    if present and len(present) != len(specs):
        raise DataError("'no finding' cannot be combined with present findings")
    seen: dict[tuple[int, int], str] = {}
    for spec in present:
        if spec.quadrant in seen:
            raise DataError(
                f"Conflicting quadrant assignment: {spec.class_id!r} and "
                f"{seen[spec.quadrant]!r} both at {' '.join(spec.location)}"
            )
        seen[spec.quadrant] = spec.class_id
    return present


def render_image(
    findings: list[FindingSpec], rng_seed: int, image_size: int = DEFAULT_IMAGE_SIZE
) -> np.ndarray:
    """Render findings into an image_size x image_size grid with values in [0, 1]."""
    if image_size % 2 or image_size < 16:
        raise DataError(f"image_size must be even and >= 16, got {image_size}")
    present = _check_consistent(findings)
    rng = np.random.default_rng(rng_seed)
    image = rng.uniform(0.0, BACKGROUND_MAX, size=(image_size, image_size))

    half = image_size // 2
    jitter = max(1, image_size // 32)
    for spec in present:
        radius = marker_radius(spec.extent, image_size)
        row_half, col_half = spec.quadrant
        centre = []
        for lo in (row_half * half, col_half * half):
            # keep a one-pixel gap to the quadrant border
            cmin, cmax = lo + 1 + radius, lo + half - 2 - radius
            base = lo + half // 2
            centre.append(int(rng.integers(max(cmin, base - jitter), min(cmax, base + jitter) + 1)))
        intensity = rng.uniform(MARKER_MIN, MARKER_MAX)
        mask = _marker_mask(spec.class_id, radius)
        r0, c0 = centre[0] - radius, centre[1] - radius
        window = image[r0 : r0 + 2 * radius + 1, c0 : c0 + 2 * radius + 1]
        window[mask] = intensity

    return np.round(image, 4)


def describe_finding(spec: FindingSpec) -> str:
    side, level = spec.location
    return SENTENCE_TEMPLATE.format(
        extent=spec.extent, class_id=spec.class_id, side=side, level=level
    )


def compose_report(findings: list[FindingSpec]) -> list[str]:
    """One sentence per present finding, or the single negation sentence."""
    present = present_findings(findings)
    if not present:
        return [NEGATION_SENTENCE]
    return [describe_finding(spec) for spec in present]


def parse_report(report: list[str]) -> list[FindingSpec]:
    """Rule-based inverse of compose_report (used to re-label reports)."""
    findings = []
    for sentence in report:
        text = sentence.strip()
        if text.lower() == NEGATION_SENTENCE.lower():
            continue
        match = _SENTENCE_RE.match(text)
        if not match:
            raise ValueError(f"Sentence outside the report grammar: {sentence!r}")
        findings.append(
            FindingSpec(
                class_id=match["class_id"].lower(),
                location=(match["side"].lower(), match["level"].lower()),
                extent=match["extent"].lower(),
            )
        )
    return findings


def generate_study(
    rng_seed: int,
    spec: list[FindingSpec],
    image_size: int = DEFAULT_IMAGE_SIZE,
    study_id: str | None = None,
) -> SyntheticStudy:
    """Generate one study; identical (seed, spec) give identical studies."""
    present = _check_consistent(spec)
    if study_id is None:
        study_id = "study-" + compute_record_hash(
            {"seed": rng_seed, "size": image_size, "spec": [s.to_dict() for s in present]}
        )
    return SyntheticStudy(
        study_id=study_id,
        image=render_image(present, rng_seed, image_size),
        report=compose_report(present),
        findings=list(present),
    )


def default_class_mix(num_classes: int = len(FINDING_CLASSES)) -> dict[str, float]:
    """Uniform mix over the first num_classes classes ("no finding" first)."""
    if not 1 <= num_classes <= len(FINDING_CLASSES):
        raise DataError(f"num_classes must be in [1, {len(FINDING_CLASSES)}]")
    return {name: 1.0 / num_classes for name in FINDING_CLASSES[:num_classes]}


def _validate_mix(class_mix: dict[str, float]) -> None:
    if not class_mix:
        raise DataError("class_mix is empty")
    for name, prob in class_mix.items():
        if name not in FINDING_CLASSES:
            raise DataError(f"Unknown class in mix: {name!r}")
        if prob < 0:
            raise DataError(f"Negative probability for {name!r}: {prob}")
    total = sum(class_mix.values())
    if abs(total - 1.0) > 1e-9:
        raise DataError(f"class_mix must sum to 1 (got {total!r})")


def _draw_spec(
    primary: str,
    rng: np.random.Generator,
    multi_finding_rate: float,
    max_findings: int,
    allowed: list[str],
) -> list[FindingSpec]:
    """Findings for one study; extra findings come only from `allowed` classes."""
    if primary == NO_FINDING:
        return []
    quadrants = [(side, level) for level in LEVELS for side in SIDES]
    order = rng.permutation(len(quadrants))
    classes = [primary]
    if max_findings > 1 and rng.random() < multi_finding_rate:
        others = [c for c in allowed if c != primary]
        extra = int(rng.integers(1, min(max_findings, len(quadrants))))
        if others:
            picked = rng.choice(len(others), size=min(extra, len(others)), replace=False)
            classes += [others[int(i)] for i in picked]
    return [
        FindingSpec(
            class_id=class_id,
            location=quadrants[int(order[i])],
            extent=EXTENTS[int(rng.integers(len(EXTENTS)))],
        )
        for i, class_id in enumerate(classes)
    ]


def generate_corpus(
    n: int,
    class_mix: dict[str, float],
    rng_seed: int,
    image_size: int = DEFAULT_IMAGE_SIZE,
    multi_finding_rate: float = 0.25,
    max_findings: int = 3,
) -> list[SyntheticStudy]:
    """Generate n studies whose primary class follows class_mix."""
    _validate_mix(class_mix)
    if n < 0:
        raise DataError(f"n must be >= 0, got {n}")
    names = list(class_mix)
    allowed = [c for c in ABNORMAL_CLASSES if class_mix.get(c, 0.0) > 0]
    probs = np.array([class_mix[name] for name in names], dtype=np.float64)
    probs = probs / probs.sum()

    rng = np.random.default_rng(rng_seed)
    corpus = []
    for i in range(n):
        primary = names[int(rng.choice(len(names), p=probs))]
        study_seed = int(rng.integers(2**32))
        spec_rng = np.random.default_rng([rng_seed, study_seed])
        spec = _draw_spec(primary, spec_rng, multi_finding_rate, max_findings, allowed)
        corpus.append(
            generate_study(study_seed, spec, image_size, study_id=f"s{rng_seed}-{i:06d}")
        )
    return corpus


def split_corpus(
    corpus: list[SyntheticStudy], train: float = 0.8, val: float = 0.1
) -> tuple[list[SyntheticStudy], list[SyntheticStudy], list[SyntheticStudy]]:
    """Contiguous train/val/test split in corpus order."""
    if train < 0 or val < 0 or train + val > 1.0 + 1e-9:
        raise DataError("split fractions must be nonnegative and sum to at most 1")
    n = len(corpus)
    n_train = round(n * train)
    n_val = min(n - n_train, round(n * val))
    return corpus[:n_train], corpus[n_train : n_train + n_val], corpus[n_train + n_val :]
