"""Word-level tokenization, sentence splitting and MLM masking."""

import re
from collections.abc import Iterable

import torch

from xvl.models.study import SyntheticStudy
from xvl.models.text import MaskedBatch, TokenizedText
from xvl.models.vocabulary import IGNORE_INDEX, Vocabulary
from xvl.utils.errors import DataError

TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")
_SENTENCE_BOUNDARY = re.compile(r"(?<=[.!?])\s+")
_PUNCTUATION = re.compile(r"[^\w\s]")

DEFAULT_MAX_LEN = 120
# [MASK] / random word / unchanged shares among selected positions
DEFAULT_CORRUPTION = (0.8, 0.1, 0.1)


def report_text(report: str | list[str]) -> str:
    if isinstance(report, str):
        return report
    return " ".join(s.strip() for s in report if s.strip())


def word_tokens(report: str | list[str]) -> list[str]:
    """Lowercased word and punctuation tokens."""
    return TOKEN_PATTERN.findall(report_text(report).lower())


def split_sentences(report: str | list[str]) -> list[str]:
    """Split on sentence-final punctuation followed by whitespace."""
    items = [report] if isinstance(report, str) else report
    sentences = []
    for item in items:
        sentences.extend(part for part in _SENTENCE_BOUNDARY.split(item.strip()) if part)
    return sentences


def build_vocab(corpus: list[SyntheticStudy], extra_texts: Iterable[str] = ()) -> Vocabulary:
    """Specials plus every word of every report (and of extra_texts, e.g. prompts)."""
    if not corpus:
        raise DataError("Cannot build a vocabulary from an empty corpus")
    words: set[str] = set()
    for study in corpus:
        words.update(word_tokens(study.report))
    for text in extra_texts:
        words.update(word_tokens(text))
    return Vocabulary.from_words(words)


def tokenize(
    report: str | list[str],
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
    pad: bool = True,
) -> TokenizedText:
    """[CLS] words [SEP] then padding to max_len; words beyond max_len - 2 are dropped."""
    if max_len < 2:
        raise ValueError("max_len must leave room for [CLS] and [SEP]")
    words = word_tokens(report)[: max_len - 2]
    ids = [vocab.cls_id] + [vocab.id(w) for w in words] + [vocab.sep_id]
    mask = [True] * len(ids)
    if pad:
        padding = max_len - len(ids)
        ids += [vocab.pad_id] * padding
        mask += [False] * padding
    return TokenizedText(tuple(ids), tuple(mask))


def detokenize(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Inverse of tokenize on in-vocabulary text; sentence starts are capitalized."""
    skip = {vocab.pad_id, vocab.cls_id, vocab.sep_id}
    pieces: list[str] = []
    capitalize = True
    for token_id in ids:
        token_id = int(token_id)
        if token_id in skip:
            continue
        token = vocab.token(token_id)
        if _PUNCTUATION.fullmatch(token):
            if pieces:
                pieces[-1] += token
            else:
                pieces.append(token)
            capitalize = token in ".!?"
            continue
        pieces.append(token.capitalize() if capitalize and not token.startswith("[") else token)
        capitalize = False
    return " ".join(pieces)


def encode_texts(
    texts: list[str | list[str]], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN
) -> tuple[torch.Tensor, torch.Tensor]:
    """Tokenize several texts into (ids, attention mask) tensors of shape (B, max_len)."""
    tokenized = [tokenize(text, vocab, max_len) for text in texts]
    ids = torch.tensor([t.ids for t in tokenized], dtype=torch.long)
    mask = torch.tensor([t.attention_mask for t in tokenized], dtype=torch.bool)
    return ids, mask


def mask_tokens(
    tokens: TokenizedText | torch.Tensor,
    vocab: Vocabulary,
    rate: float = 0.15,
    generator: torch.Generator | None = None,
    corruption: tuple[float, float, float] = DEFAULT_CORRUPTION,
) -> MaskedBatch:
    """Select non-special positions with probability `rate` and corrupt them.

    Selected positions become [MASK], a random regular word, or stay unchanged
    according to `corruption`. Labels hold the original id at selected
    positions and IGNORE_INDEX elsewhere.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    if abs(sum(corruption) - 1.0) > 1e-9 or min(corruption) < 0:
        raise ValueError("corruption shares must be nonnegative and sum to 1")
    ids = tokens.ids_tensor() if isinstance(tokens, TokenizedText) else tokens.clone()

    special = torch.zeros_like(ids, dtype=torch.bool)
    for special_id in vocab.special_ids:
        special |= ids == special_id

    selected = (torch.rand(ids.shape, generator=generator) < rate) & ~special
    labels = torch.where(selected, ids, torch.full_like(ids, IGNORE_INDEX))

    share_mask, share_random, _ = corruption
    draw = torch.rand(ids.shape, generator=generator)
    to_mask = selected & (draw < share_mask)
    to_random = selected & (draw >= share_mask) & (draw < share_mask + share_random)

    masked = ids.clone()
    masked[to_mask] = vocab.mask_id
    if len(vocab) > vocab.first_regular_id:
        random_ids = torch.randint(
            vocab.first_regular_id, len(vocab), ids.shape, generator=generator
        )
        masked[to_random] = random_ids[to_random]

    return MaskedBatch(input_ids=masked, labels=labels, mask_positions=selected)
