"""Vocabulary model - word-level token/id bijection with special tokens."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

PAD = "[PAD]"
UNK = "[UNK]"
CLS = "[CLS]"
SEP = "[SEP]"
MASK = "[MASK]"
SPECIAL_TOKENS: tuple[str, ...] = (PAD, UNK, CLS, SEP, MASK)

# Target marker for positions that carry no MLM label; never a valid id.
IGNORE_INDEX = -100


@dataclass
class Vocabulary:
    """Immutable token <-> id mapping; ids are positions in `tokens`."""

    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError("Vocabulary must start with the special tokens")
        self._index = {token: i for i, token in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("Vocabulary tokens must be unique")

    @classmethod
    def from_words(cls, words: set[str] | list[str]) -> Vocabulary:
        regular = sorted(set(words) - set(SPECIAL_TOKENS))
        return cls(SPECIAL_TOKENS + tuple(regular))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, self.unk_id)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3

    @property
    def mask_id(self) -> int:
        return 4

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(range(len(SPECIAL_TOKENS)))

    @property
    def first_regular_id(self) -> int:
        return len(SPECIAL_TOKENS)

    def save(self, path: Path) -> None:
        """One token per line; the id is the line number."""
        with open(path, "w") as f:
            f.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: Path) -> Vocabulary:
        with open(path) as f:
            tokens = tuple(line.rstrip("\n") for line in f if line.rstrip("\n"))
        return cls(tokens)
