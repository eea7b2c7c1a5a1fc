"""Tests for zero-shot scoring, correction and attention maps."""

import numpy as np
import pytest
import torch
from torch import nn

from xvl.models.study import ABNORMAL_CLASSES
from xvl.services.network import build_model
from xvl.services.textpipe import word_tokens
from xvl.services.zeroshot import (
    DETAILED_TEMPLATES,
    ClassPrompts,
    PromptSet,
    ZeroShotScorer,
    default_prompts,
    dump_prompts,
    load_prompts,
    quadrant_mass,
)
from xvl.utils.errors import DataError

REPORT = ["There is small atrex in the left upper zone."]


class FixedWordHead(nn.Module):
    """MLM head that puts almost all probability on one token."""

    def __init__(self, vocab_size: int, token_id: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.token_id = token_id

    def forward(self, fused_words: torch.Tensor) -> torch.Tensor:
        logits = torch.zeros(*fused_words.shape[:-1], self.vocab_size)
        logits[..., self.token_id] = 20.0
        return logits


@pytest.fixture
def scorer(tiny_config, vocab):
    model = build_model(tiny_config.model, len(vocab), seed=2)
    return ZeroShotScorer(model, vocab, batch_size=3)


@pytest.fixture
def images(small_corpus):
    return np.stack([s.image for s in small_corpus[:5]])


class TestPrompts:
    """Tests for prompt sets and the prompt file format."""

    def test_default_prompts(self):
        prompts = default_prompts()

        assert [p.class_id for p in prompts] == list(ABNORMAL_CLASSES)
        atrex = prompts["atrex"]
        assert atrex.positive == "atrex"
        assert atrex.negative == "no atrex"
        assert len(atrex.detailed) == len(DETAILED_TEMPLATES)
        assert "There is atrex." in atrex.detailed

    def test_unknown_class(self):
        with pytest.raises(DataError):
            default_prompts()["pneumonia"]

    def test_file_round_trip(self, temp_dir):
        prompts = default_prompts(["atrex", "corda"])
        dump_prompts(prompts, temp_dir / "prompts.txt")

        assert load_prompts(temp_dir / "prompts.txt") == prompts

    def test_comments_and_optional_detailed(self, temp_dir):
        path = temp_dir / "prompts.txt"
        path.write_text("# hand-written\nclass: effra\npositive: effra\nnegative: no effra\n")

        prompts = load_prompts(path)

        assert prompts["effra"].detailed == []

    @pytest.mark.parametrize(
        "content,message",
        [
            ("class: atrex\npositive atrex\n", "malformed"),
            ("class: atrex\npositive: atrex\n", "lacks 'negative'"),
            ("\n\n# nothing here\n", "no prompt blocks"),
        ],
    )
    def test_bad_files(self, temp_dir, content, message):
        path = temp_dir / "prompts.txt"
        path.write_text(content)
        with pytest.raises(DataError, match=message):
            load_prompts(path)

    def test_missing_file(self, temp_dir):
        with pytest.raises(DataError, match="not found"):
            load_prompts(temp_dir / "nope.txt")


class TestQuadrantMass:
    """Tests for quadrant_mass function."""

    def test_single_quadrant(self):
        heatmap = np.zeros((16, 16))
        heatmap[:8, :8] = 1.0

        masses = quadrant_mass(heatmap)

        assert masses["left upper"] == 1.0
        assert masses["right lower"] == 0.0

    def test_sums_to_one(self):
        masses = quadrant_mass(np.random.default_rng(0).random((16, 16)))
        assert sum(masses.values()) == pytest.approx(1.0)
        assert len(masses) == 4

    def test_empty_map(self):
        assert set(quadrant_mass(np.zeros((4, 4))).values()) == {0.0}


class TestScores:
    """Tests for match scores, classification and error detection."""

    def test_invalid_score_fn(self, tiny_config, vocab):
        model = build_model(tiny_config.model, len(vocab))
        with pytest.raises(ValueError):
            ZeroShotScorer(model, vocab, score_fn="dot")

    def test_match_scores_batch_independent(self, scorer, images, small_corpus):
        reports = [s.report for s in small_corpus[:5]]
        batched = scorer.match_scores(images, reports)
        single = [scorer.match_score(img, r) for img, r in zip(images, reports, strict=True)]

        assert batched.shape == (5,)
        assert np.all((batched > 0) & (batched < 1))
        np.testing.assert_allclose(batched, single, atol=1e-5)

    def test_pairs_must_line_up(self, scorer, images):
        with pytest.raises(ValueError):
            scorer.match_logits(images, [REPORT])

    def test_detect_errors_complements_match(self, scorer, images, small_corpus):
        reports = [s.report for s in small_corpus[:5]]
        np.testing.assert_allclose(
            scorer.detect_errors(images, reports), 1.0 - scorer.match_scores(images, reports)
        )

    def test_cosine_scores_in_unit_interval(self, tiny_config, vocab, images, small_corpus):
        model = build_model(tiny_config.model, len(vocab), seed=2)
        cosine = ZeroShotScorer(model, vocab, score_fn="cosine")
        scores = cosine.match_scores(images, [s.report for s in small_corpus[:5]])
        assert np.all((scores >= 0) & (scores <= 1))

    def test_classify_is_softmax_of_prompt_logits(self, scorer, images):
        prompts = default_prompts()

        probs = scorer.classify(images, "atrex", prompts)
        positive = scorer.match_logits(images, ["atrex"] * 5)
        negative = scorer.match_logits(images, ["no atrex"] * 5)

        np.testing.assert_allclose(probs, 1.0 / (1.0 + np.exp(negative - positive)), atol=1e-5)

    def test_classify_detailed(self, scorer, images):
        probs = scorer.classify(images, "corda", default_prompts(), mode="detailed")

        assert probs.shape == (5,)
        assert np.all((probs > 0) & (probs < 1))
        assert scorer.classify_detailed(images[0], "corda", default_prompts()) == pytest.approx(
            probs[0], abs=1e-6
        )

    def test_classify_detailed_needs_descriptions(self, scorer, images):
        prompts = PromptSet({"atrex": ClassPrompts("atrex", "atrex", "no atrex")})
        with pytest.raises(DataError, match="detailed"):
            scorer.classify(images, "atrex", prompts, mode="detailed")

    def test_classify_mode(self, scorer, images):
        with pytest.raises(ValueError):
            scorer.classify(images, "atrex", default_prompts(), mode="fancy")


class TestCorrectReport:
    """Tests for correct_report method."""

    def test_unreachable_threshold_leaves_report(self, scorer, small_corpus):
        result = scorer.correct_report(small_corpus[0].image, REPORT, theta=1.01)

        assert result.report == REPORT
        assert not result.changed

    def test_substitutions_are_plain_words(self, scorer, small_corpus):
        result = scorer.correct_report(small_corpus[0].image, REPORT, theta=0.0)
        n_words = len(word_tokens(REPORT))
        specials = {scorer.vocab.token(i) for i in scorer.vocab.special_ids}

        for sub in result.substitutions:
            assert 0 <= sub.position < n_words
            assert sub.old == word_tokens(REPORT)[sub.position]
            assert sub.new not in specials
            assert sub.new != sub.old
        if result.changed:
            corrected = word_tokens(result.report)
            assert len(corrected) == n_words
            for sub in result.substitutions:
                assert corrected[sub.position] == sub.new

    def test_report_at_mlm_argmax_is_unchanged(self, scorer, small_corpus):
        scorer.model.mlm = FixedWordHead(len(scorer.vocab), scorer.vocab.id("atrex"))

        result = scorer.correct_report(small_corpus[0].image, ["atrex"], theta=0.0)

        assert result.report == ["atrex"]
        assert not result.changed

    @pytest.mark.parametrize("theta", [0.5, 0.7])
    def test_idempotent(self, scorer, small_corpus, theta):
        scorer.model.mlm = FixedWordHead(len(scorer.vocab), scorer.vocab.id("atrex"))
        image = small_corpus[0].image

        once = scorer.correct_report(image, REPORT, theta=theta)
        twice = scorer.correct_report(image, once.report, theta=theta)

        assert once.changed
        assert set(word_tokens(once.report)) == {"atrex"}
        assert twice.report == once.report
        assert not twice.changed

    def test_positions_are_masked_one_at_a_time(self, scorer, small_corpus, monkeypatch):
        original = scorer.model.encode_text
        seen = []

        def recording(ids, mask):
            seen.append(ids.clone())
            return original(ids, mask)

        monkeypatch.setattr(scorer.model, "encode_text", recording)
        scorer.correct_report(small_corpus[0].image, REPORT, theta=0.0)

        rows = torch.cat(seen)
        n_words = len(word_tokens(REPORT))
        reference = torch.tensor(
            [scorer.vocab.cls_id]
            + [scorer.vocab.id(w) for w in word_tokens(REPORT)]
            + [scorer.vocab.sep_id]
        )
        masked = rows == scorer.vocab.mask_id
        assert rows.shape[0] == n_words
        assert (masked.sum(dim=1) == 1).all()
        assert masked[:, 1 : n_words + 1].diagonal().all()
        for row in rows:
            differs = row[: n_words + 2] != reference
            assert differs.sum() == 1

    def test_substitution_probability_matches_single_masked_prediction(self, scorer, small_corpus):
        image = small_corpus[0].image
        result = scorer.correct_report(image, REPORT, theta=0.0)
        assert result.substitutions

        sub = result.substitutions[0]
        words = word_tokens(REPORT)
        ids = [scorer.vocab.cls_id] + [scorer.vocab.id(w) for w in words] + [scorer.vocab.sep_id]
        ids[sub.position + 1] = scorer.vocab.mask_id
        ids = torch.tensor([ids])
        mask = torch.ones_like(ids, dtype=torch.bool)
        with torch.no_grad():
            model = scorer.model
            fused = model.fuse(
                model.encode_image(torch.as_tensor(image, dtype=torch.float32)[None]),
                model.encode_text(ids, mask),
                mask,
            )
            probs = torch.softmax(model.mlm_head(fused.text)[0, sub.position + 1].double(), -1)

        assert float(probs.max()) == pytest.approx(sub.prob, abs=1e-5)
        assert scorer.vocab.token(int(probs.argmax())) == sub.new


class TestReadOnly:
    """Zero-shot operations must not touch the weights."""

    def test_parameters_bit_unchanged(self, scorer, images, small_corpus):
        before = {k: v.clone() for k, v in scorer.model.state_dict().items()}
        reports = [s.report for s in small_corpus[:5]]
        prompts = default_prompts()

        scorer.match_scores(images, reports)
        scorer.detect_errors(images, reports)
        scorer.classify(images, "atrex", prompts)
        scorer.classify(images, "atrex", prompts, mode="detailed")
        scorer.correct_report(images[0], REPORT, theta=0.0)
        scorer.attention_gradcam(images[0], REPORT)

        after = scorer.model.state_dict()
        assert after.keys() == before.keys()
        for key, value in before.items():
            assert torch.equal(after[key], value), key
        assert all(p.grad is None for p in scorer.model.parameters())


class TestAttentionGradcam:
    """Tests for attention_gradcam method."""

    def test_shapes(self, scorer, small_corpus):
        heatmap = scorer.attention_gradcam(small_corpus[0].image, REPORT)

        assert heatmap.words == word_tokens(REPORT)
        assert heatmap.positions == list(range(len(heatmap.words)))
        assert heatmap.maps.shape == (len(heatmap.words), 16, 16)
        assert np.all(heatmap.maps >= 0)
        assert heatmap.for_word("atrex").shape == (16, 16)

    def test_zeroed_gradients_give_empty_maps(self, scorer, small_corpus):
        heatmap = scorer.attention_gradcam(
            small_corpus[0].image, REPORT, gradient_hook=torch.zeros_like
        )
        assert not heatmap.maps.any()

    def test_custom_target(self, scorer, small_corpus):
        heatmap = scorer.attention_gradcam(
            small_corpus[0].image, REPORT, target=lambda fused, logits: logits[:, 0].sum()
        )
        assert np.all(np.isfinite(heatmap.maps))

    @pytest.mark.parametrize("layer", [1, -2])
    def test_layer_out_of_range(self, scorer, small_corpus, layer):
        with pytest.raises(ValueError, match="out of range"):
            scorer.attention_gradcam(small_corpus[0].image, REPORT, layer=layer)
