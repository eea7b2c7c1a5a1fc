"""Line-delimited JSON files, corpus splits and run manifests."""

import json
import subprocess
from collections.abc import Iterable
from pathlib import Path

from xvl.models.error_record import ErrorRecord
from xvl.models.run import RunManifest
from xvl.models.study import SyntheticStudy
from xvl.utils.errors import DataError
from xvl.utils.hashing import compute_corpus_hash

CORPUS_SCHEMA = "xvl-corpus/1"
MANIFEST_NAME = "manifest.json"


def write_jsonl(path: Path, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def read_jsonl(path: Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}")
    records = []
    with open(path) as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{number}: invalid JSON: {e}") from e
    return records


def write_corpus(
    path: Path,
    studies: list[SyntheticStudy],
    errors: list[ErrorRecord] | None = None,
) -> Path:
    """Schema line, then one study per line; corrupted sets add an `error` field."""
    if errors is not None and len(errors) != len(studies):
        raise ValueError("errors must have one record per study")

    def lines():
        yield {"schema": CORPUS_SCHEMA}
        for i, study in enumerate(studies):
            record = study.to_dict()
            if errors is not None:
                record["error"] = errors[i].to_dict()
            yield record

    return write_jsonl(path, lines())


def _corpus_records(path: Path) -> list[dict]:
    records = read_jsonl(path)
    if not records or records[0].get("schema") != CORPUS_SCHEMA:
        raise DataError(f"{path}: missing schema line {{'schema': '{CORPUS_SCHEMA}'}}")
    return records[1:]


def read_corpus(path: Path) -> list[SyntheticStudy]:
    try:
        return [SyntheticStudy.from_dict(r) for r in _corpus_records(path)]
    except (KeyError, ValueError) as e:
        raise DataError(f"{path}: malformed study record: {e}") from e


def read_corrupted(path: Path) -> list[tuple[SyntheticStudy, ErrorRecord]]:
    """Studies (carrying the corrupted report) with their ErrorRecords."""
    pairs = []
    for record in _corpus_records(path):
        if "error" not in record:
            raise DataError(f"{path}: study {record.get('study_id')!r} has no error record")
        try:
            pairs.append((SyntheticStudy.from_dict(record), ErrorRecord.from_dict(record["error"])))
        except (KeyError, ValueError) as e:
            raise DataError(f"{path}: malformed corrupted record: {e}") from e
    return pairs


def corpus_hash(path: Path) -> str:
    """Fingerprint of a corpus file's lines, in order."""
    with open(path) as f:
        return compute_corpus_hash([line.rstrip("\n") for line in f])


def git_describe(cwd: Path | None = None) -> str:
    """`git describe --always --dirty`, or "unknown" outside a repository."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=cwd or Path(__file__).parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    return result.stdout.strip() if result.returncode == 0 and result.stdout.strip() else "unknown"


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return path


def read_manifest(out_dir: Path) -> RunManifest:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"No manifest in {out_dir}")
    return RunManifest.from_dict(json.loads(path.read_text()))
