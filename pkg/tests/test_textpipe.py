"""Tests for tokenization, vocabulary building and MLM masking."""

import pytest
import torch

from xvl.models.vocabulary import IGNORE_INDEX, Vocabulary
from xvl.services.synthdata import generate_study
from xvl.services.textpipe import (
    build_vocab,
    detokenize,
    encode_texts,
    mask_tokens,
    split_sentences,
    tokenize,
    word_tokens,
)
from xvl.utils.errors import DataError

REPORT = [
    "There is small atrex in the left upper zone.",
    "There is large corda in the right lower zone.",
]


@pytest.fixture
def report_vocab():
    return Vocabulary.from_words(word_tokens(REPORT))


class TestWordTokens:
    """Tests for word_tokens and split_sentences."""

    def test_lowercases_and_splits_punctuation(self):
        assert word_tokens("There is small atrex.") == ["there", "is", "small", "atrex", "."]

    def test_list_report_is_joined(self):
        assert len(word_tokens(REPORT)) == 20

    def test_split_sentences(self):
        assert split_sentences(" ".join(REPORT)) == REPORT
        assert split_sentences(REPORT) == REPORT
        assert split_sentences("No evidence of abnormality.") == ["No evidence of abnormality."]


class TestTokenize:
    """Tests for tokenize and detokenize."""

    def test_layout(self, report_vocab):
        tokens = tokenize(REPORT, report_vocab, max_len=30)

        assert len(tokens) == 30
        assert tokens.ids[0] == report_vocab.cls_id
        assert tokens.ids[21] == report_vocab.sep_id
        assert tokens.length == 22
        assert all(tokens.attention_mask[:22])
        assert not any(tokens.attention_mask[22:])
        assert set(tokens.ids[22:]) == {report_vocab.pad_id}

    def test_truncation_keeps_sep(self, report_vocab):
        tokens = tokenize(REPORT, report_vocab, max_len=8)

        assert len(tokens) == 8
        assert tokens.ids[-1] == report_vocab.sep_id
        assert tokens.length == 8

    def test_unpadded(self, report_vocab):
        tokens = tokenize("there is atrex", report_vocab, pad=False)
        assert len(tokens) == 5

    def test_unknown_words(self, report_vocab):
        tokens = tokenize("there is pneumonia", report_vocab, pad=False)
        assert tokens.ids[3] == report_vocab.unk_id

    def test_max_len_too_small(self, report_vocab):
        with pytest.raises(ValueError):
            tokenize(REPORT, report_vocab, max_len=1)

    def test_detokenize_inverts_tokenize(self, report_vocab):
        """Test in-vocabulary reports survive a tokenize/detokenize pass."""
        tokens = tokenize(REPORT, report_vocab, max_len=40)
        assert detokenize(tokens.ids, report_vocab) == " ".join(REPORT)

    def test_encode_texts(self, report_vocab):
        ids, mask = encode_texts([REPORT, "there is atrex"], report_vocab, max_len=24)

        assert ids.shape == (2, 24)
        assert ids.dtype == torch.long
        assert mask.dtype == torch.bool
        assert mask.sum(dim=1).tolist() == [22, 5]


class TestBuildVocab:
    """Tests for build_vocab function."""

    def test_corpus_and_prompt_words(self):
        corpus = [generate_study(0, [], image_size=16)]
        vocab = build_vocab(corpus, extra_texts=["there is effra"])

        assert "abnormality" in vocab
        assert "effra" in vocab
        assert "." in vocab

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_vocab([])


class TestMaskTokens:
    """Tests for mask_tokens function."""

    def test_specials_never_selected(self, report_vocab):
        ids, _ = encode_texts([REPORT], report_vocab, max_len=30)
        generator = torch.Generator().manual_seed(0)
        masked = mask_tokens(ids, report_vocab, rate=1.0, generator=generator)

        special = (ids == report_vocab.cls_id) | (ids == report_vocab.sep_id)
        special |= ids == report_vocab.pad_id
        assert not masked.mask_positions[special].any()
        assert masked.mask_positions[~special].all()
        assert masked.num_targets == 20

    def test_labels(self, report_vocab):
        ids, _ = encode_texts([REPORT], report_vocab, max_len=30)
        generator = torch.Generator().manual_seed(1)
        masked = mask_tokens(ids, report_vocab, rate=0.5, generator=generator)

        selected = masked.mask_positions
        assert torch.equal(masked.labels[selected], ids[selected])
        assert (masked.labels[~selected] == IGNORE_INDEX).all()
        assert torch.equal(masked.input_ids[~selected], ids[~selected])

    def test_all_mask_corruption(self, report_vocab):
        ids, _ = encode_texts([REPORT], report_vocab, max_len=30)
        masked = mask_tokens(
            ids, report_vocab, rate=1.0, generator=torch.Generator().manual_seed(2),
            corruption=(1.0, 0.0, 0.0),
        )
        assert (masked.input_ids[masked.mask_positions] == report_vocab.mask_id).all()

    def test_corruption_shares(self, report_vocab):
        """Test the 80/10/10 split over many selected positions."""
        ids, _ = encode_texts([REPORT] * 200, report_vocab, max_len=24)
        generator = torch.Generator().manual_seed(3)
        masked = mask_tokens(ids, report_vocab, rate=1.0, generator=generator)

        selected = masked.mask_positions
        n = selected.sum().item()
        as_mask = (masked.input_ids[selected] == report_vocab.mask_id).sum().item()
        unchanged = (masked.input_ids[selected] == ids[selected]).sum().item()
        assert as_mask / n == pytest.approx(0.8, abs=0.03)
        # random replacements can land on the original word
        assert 0.08 < unchanged / n < 0.16

    def test_zero_rate(self, report_vocab):
        ids, _ = encode_texts([REPORT], report_vocab, max_len=30)
        masked = mask_tokens(ids, report_vocab, rate=0.0)
        assert masked.num_targets == 0
        assert torch.equal(masked.input_ids, ids)

    def test_deterministic_with_generator(self, report_vocab):
        ids, _ = encode_texts([REPORT], report_vocab, max_len=30)
        a = mask_tokens(ids, report_vocab, 0.3, torch.Generator().manual_seed(9))
        b = mask_tokens(ids, report_vocab, 0.3, torch.Generator().manual_seed(9))
        assert torch.equal(a.input_ids, b.input_ids)
        assert torch.equal(a.labels, b.labels)

    def test_invalid_arguments(self, report_vocab):
        ids, _ = encode_texts([REPORT], report_vocab, max_len=30)
        with pytest.raises(ValueError):
            mask_tokens(ids, report_vocab, rate=1.5)
        with pytest.raises(ValueError):
            mask_tokens(ids, report_vocab, corruption=(0.5, 0.5, 0.5))
