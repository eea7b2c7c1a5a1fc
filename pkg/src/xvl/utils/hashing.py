"""Content hashes for studies and corpora."""

import hashlib
import json


def compute_content_hash(content: str) -> str:
    """Compute SHA-256 hash of arbitrary content.

    Returns:
        16-character hexadecimal hash
    """
    return hashlib.sha256(content.encode()).hexdigest()[:16]


def compute_record_hash(record: dict) -> str:
    """Hash a JSON-serializable record with sorted keys."""
    return compute_content_hash(json.dumps(record, sort_keys=True, separators=(",", ":")))


def compute_corpus_hash(lines: list[str]) -> str:
    """Fingerprint a serialized corpus (its JSON lines, in order)."""
    digest = hashlib.sha256()
    for line in lines:
        digest.update(line.encode())
        digest.update(b"\n")
    return digest.hexdigest()[:16]
