"""Report corruption with the five simulated human-error types.

Token positions in ErrorRecords index the lowercased word/punctuation tokens of
the whole report (the tokenizer's tokens, without [CLS]).
"""

import numpy as np

from xvl.models.error_record import ErrorRecord, ErrorType
from xvl.models.study import SyntheticStudy
from xvl.services.synthdata import compose_report, parse_report
from xvl.services.textpipe import TOKEN_PATTERN
from xvl.utils.errors import InapplicableError

LOCATION_ANTONYMS = {
    "left": "right",
    "right": "left",
    "upper": "lower",
    "lower": "upper",
    "apical": "basal",
    "basal": "apical",
    "central": "peripheral",
    "peripheral": "central",
}

EXTENT_ANTONYMS = {
    "mild": "severe",
    "severe": "mild",
    "small": "large",
    "large": "small",
    "minimal": "extensive",
    "extensive": "minimal",
}


def term_positions(report: list[str], lexicon: dict[str, str]) -> list[int]:
    """Token positions whose lowercased token is a lexicon term."""
    positions = []
    index = 0
    for sentence in report:
        for match in TOKEN_PATTERN.finditer(sentence):
            if match.group().lower() in lexicon:
                positions.append(index)
            index += 1
    return positions


def flip_term(report: list[str], position: int, lexicon: dict[str, str]) -> list[str]:
    """Replace the term at a token position by its antonym, keeping capitalization."""
    index = 0
    flipped = []
    for sentence in report:
        matches = list(TOKEN_PATTERN.finditer(sentence))
        if index <= position < index + len(matches):
            match = matches[position - index]
            word = match.group()
            if word.lower() not in lexicon:
                raise ValueError(f"Token {word!r} at position {position} has no antonym")
            antonym = lexicon[word.lower()]
            if word[0].isupper():
                antonym = antonym.capitalize()
            sentence = sentence[: match.start()] + antonym + sentence[match.end() :]
        flipped.append(sentence)
        index += len(matches)
    if position < 0 or position >= index:
        raise ValueError(f"Position {position} outside report of {index} tokens")
    return flipped


def _inject_term(
    report: list[str], lexicon: dict[str, str], rng: np.random.Generator
) -> tuple[list[str], int] | None:
    positions = term_positions(report, lexicon)
    if not positions:
        return None
    position = positions[int(rng.integers(len(positions)))]
    return flip_term(report, position, lexicon), position


def inject_location_error(
    report: list[str], rng: np.random.Generator
) -> tuple[list[str], int] | None:
    """Flip one uniformly chosen location term; None when the report has none."""
    return _inject_term(report, LOCATION_ANTONYMS, rng)


def inject_extent_error(
    report: list[str], rng: np.random.Generator
) -> tuple[list[str], int] | None:
    """Flip one uniformly chosen extent term; None when the report has none."""
    return _inject_term(report, EXTENT_ANTONYMS, rng)


def _mismatch_candidates(
    study: SyntheticStudy, corpus: list[SyntheticStudy]
) -> list[SyntheticStudy]:
    return [s for s in corpus if s.label_classes != study.label_classes]


def inject_mismatch(
    study: SyntheticStudy, corpus: list[SyntheticStudy], rng: np.random.Generator
) -> tuple[list[str], str] | None:
    """Report of a uniformly chosen study with a different label class set."""
    candidates = _mismatch_candidates(study, corpus)
    if not candidates:
        return None
    source = candidates[int(rng.integers(len(candidates)))]
    return list(source.report), source.study_id


def _abnormal_by_class(corpus: list[SyntheticStudy]) -> dict[str, list[SyntheticStudy]]:
    by_class: dict[str, list[SyntheticStudy]] = {}
    for s in corpus:
        if not s.is_normal:
            for class_id in sorted(s.label_classes):
                by_class.setdefault(class_id, []).append(s)
    return by_class


def inject_false_positive(
    study: SyntheticStudy, corpus: list[SyntheticStudy], rng: np.random.Generator
) -> tuple[list[str], str] | None:
    """No-finding study gets an abnormal report: class uniform, then study uniform."""
    if not study.is_normal:
        return None
    by_class = _abnormal_by_class(corpus)
    if not by_class:
        return None
    classes = sorted(by_class)
    pool = by_class[classes[int(rng.integers(len(classes)))]]
    source = pool[int(rng.integers(len(pool)))]
    return list(source.report), source.study_id


def inject_false_negative(study: SyntheticStudy) -> list[str] | None:
    """Abnormal study gets the no-finding report."""
    if study.is_normal:
        return None
    return compose_report([])


def applicable_types(study: SyntheticStudy, corpus: list[SyntheticStudy]) -> list[ErrorType]:
    types = []
    if _mismatch_candidates(study, corpus):
        types.append(ErrorType.MISMATCH)
    if term_positions(study.report, LOCATION_ANTONYMS):
        types.append(ErrorType.LOCATION)
    if term_positions(study.report, EXTENT_ANTONYMS):
        types.append(ErrorType.EXTENT)
    if not study.is_normal:
        types.append(ErrorType.FALSE_NEGATIVE)
    elif any(not s.is_normal for s in corpus):
        types.append(ErrorType.FALSE_POSITIVE)
    return types


def inject(
    study: SyntheticStudy,
    corpus: list[SyntheticStudy],
    error_type: ErrorType,
    rng: np.random.Generator,
) -> ErrorRecord:
    """Inject one error of the given type; InapplicableError when it cannot apply."""
    original = list(study.report)
    positions: list[int] = []
    source_id = None
    result = None
    if error_type is ErrorType.MISMATCH:
        result = inject_mismatch(study, corpus, rng)
        if result is not None:
            corrupted, source_id = result
    elif error_type is ErrorType.LOCATION:
        result = inject_location_error(original, rng)
        if result is not None:
            corrupted, position = result
            positions = [position]
    elif error_type is ErrorType.EXTENT:
        result = inject_extent_error(original, rng)
        if result is not None:
            corrupted, position = result
            positions = [position]
    elif error_type is ErrorType.FALSE_POSITIVE:
        result = inject_false_positive(study, corpus, rng)
        if result is not None:
            corrupted, source_id = result
    elif error_type is ErrorType.FALSE_NEGATIVE:
        result = corrupted = inject_false_negative(study)
    else:
        raise ValueError("Cannot inject error type 'none'")
    if result is None:
        raise InapplicableError(f"{error_type.value} does not apply to study {study.study_id}")
    return ErrorRecord(error_type, original, corrupted, positions, source_id)


def corrupt(
    study: SyntheticStudy,
    corpus: list[SyntheticStudy],
    p: float = 0.05,
    rng: np.random.Generator | None = None,
) -> tuple[SyntheticStudy, ErrorRecord]:
    """With probability p inject one error of a uniformly chosen applicable type.

    The returned study shares id, image and findings with the input; only the
    report can change.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    rng = rng if rng is not None else np.random.default_rng()
    original = list(study.report)
    unchanged = ErrorRecord(ErrorType.NONE, original, list(original))
    if rng.random() >= p:
        return study, unchanged

    types = applicable_types(study, corpus)
    if not types:
        unchanged.inapplicable = True
        return study, unchanged
    record = inject(study, corpus, types[int(rng.integers(len(types)))], rng)
    return study.with_report(record.corrupted), record


def corrupt_corpus(
    corpus: list[SyntheticStudy], p: float = 0.05, seed: int = 0
) -> list[tuple[SyntheticStudy, ErrorRecord]]:
    """Corrupt every study with its own derived random stream."""
    streams = np.random.SeedSequence(seed).spawn(len(corpus))
    return [
        corrupt(study, corpus, p, np.random.default_rng(stream))
        for study, stream in zip(corpus, streams, strict=True)
    ]


def check_error_consistency(study: SyntheticStudy, record: ErrorRecord) -> bool:
    """Re-label the corrupted report and compare with the image's ground truth.

    True when the disagreement is exactly the one the error type predicts.
    """
    truth = {(f.class_id, f.location, f.extent) for f in study.findings if f.present}
    parsed = {(f.class_id, f.location, f.extent) for f in parse_report(record.corrupted)}
    truth_classes = {c for c, _, _ in truth}
    parsed_classes = {c for c, _, _ in parsed}

    if record.error_type is ErrorType.NONE:
        return parsed == truth
    if record.error_type is ErrorType.MISMATCH:
        return parsed_classes != truth_classes
    if record.error_type is ErrorType.FALSE_POSITIVE:
        return not truth and bool(parsed)
    if record.error_type is ErrorType.FALSE_NEGATIVE:
        return bool(truth) and not parsed

    # Location or extent: same classes, exactly one finding differs in that field only
    if parsed_classes != truth_classes or len(parsed) != len(truth):
        return False
    truth_by_class = {c: (loc, ext) for c, loc, ext in truth}
    changed = 0
    for class_id, location, extent in parsed:
        true_location, true_extent = truth_by_class[class_id]
        if record.error_type is ErrorType.LOCATION:
            if extent != true_extent:
                return False
            changed += location != true_location
        else:
            if location != true_location:
                return False
            changed += extent != true_extent
    return changed == 1
