"""Tests for the encoders, fusion paths and heads."""

import pytest
import torch

from xvl.services.network import (
    Attention,
    build_model,
    l2_normalize,
    match_logit,
    match_probability,
)
from xvl.services.textpipe import encode_texts
from xvl.utils.errors import DataError

REPORTS = [
    ["There is small atrex in the left upper zone."],
    ["No evidence of abnormality."],
    ["There is large corda in the right lower zone."],
]


@pytest.fixture
def model(tiny_config, vocab):
    return build_model(tiny_config.model, len(vocab), seed=0).eval()


@pytest.fixture
def inputs(tiny_config, vocab):
    images = torch.rand(3, 16, 16, generator=torch.Generator().manual_seed(0))
    ids, mask = encode_texts(REPORTS, vocab, tiny_config.model.max_len)
    return images, ids, mask


class TestAttention:
    """Tests for the attention block."""

    def test_probabilities_sum_to_one(self):
        attention = Attention(dim=8, heads=2)
        query, context = torch.randn(2, 3, 8), torch.randn(2, 5, 8)

        out, probs = attention(query, context)

        assert out.shape == (2, 3, 8)
        assert probs.shape == (2, 2, 3, 5)
        assert torch.allclose(probs.sum(-1), torch.ones(2, 2, 3))

    def test_masked_keys_get_zero_weight(self):
        attention = Attention(dim=8, heads=2)
        key_mask = torch.tensor([[True, True, False, False, True]])

        _, probs = attention(torch.randn(1, 3, 8), torch.randn(1, 5, 8), key_mask)

        assert (probs[..., ~key_mask[0]] == 0).all()

    def test_dimension_mismatch(self):
        attention = Attention(dim=8, heads=2)
        with pytest.raises(ValueError, match="dimension mismatch"):
            attention(torch.randn(1, 3, 8), torch.randn(1, 5, 6))

    def test_heads_must_divide_dim(self):
        with pytest.raises(ValueError):
            Attention(dim=10, heads=3)


class TestEncoders:
    """Tests for the uni-modal encoders."""

    def test_patch_sequence_shape(self, model):
        patches = model.encode_image(torch.rand(2, 16, 16))
        assert patches.shape == (2, 5, 32)

    def test_channel_axis_accepted(self, model):
        assert model.encode_image(torch.rand(2, 1, 16, 16)).shape == (2, 5, 32)

    def test_patchify_is_row_major(self, model):
        image = torch.zeros(1, 16, 16)
        image[0, :8, 8:] = 1.0  # upper right block
        patches = model.vision.patchify(image)

        assert patches.shape == (1, 4, 64)
        assert patches[0, 1].sum() == 64
        assert patches[0, [0, 2, 3]].sum() == 0

    def test_wrong_image_size(self, model):
        with pytest.raises(DataError, match="do not match"):
            model.encode_image(torch.rand(2, 32, 32))

    def test_word_sequence_shape(self, model, inputs):
        _, ids, mask = inputs
        assert model.encode_text(ids, mask).shape == (3, 40, 32)

    def test_sequence_too_long(self, model, vocab):
        ids = torch.full((1, 41), vocab.cls_id)
        with pytest.raises(DataError, match="exceeds max_len"):
            model.encode_text(ids, torch.ones(1, 41, dtype=torch.bool))

    def test_padding_does_not_change_real_positions(self, model, vocab, inputs):
        """Test word outputs are invariant to how much padding follows."""
        _, ids, mask = inputs
        short_ids, short_mask = encode_texts(REPORTS, vocab, max_len=24)

        full = model.encode_text(ids, mask)
        short = model.encode_text(short_ids, short_mask)

        for row in range(3):
            n = int(short_mask[row].sum())
            assert torch.allclose(full[row, :n], short[row, :n], atol=1e-5)


class TestFusion:
    """Tests for the bidirectional fusion encoder."""

    def test_output_shapes(self, model, inputs):
        images, ids, mask = inputs
        fused = model.fuse(model.encode_image(images), model.encode_text(ids, mask), mask)

        assert fused.text.shape == (3, 40, 32)
        assert fused.image.shape == (3, 5, 32)
        assert fused.t2i_maps.shape == (1, 3, 2, 40, 5)
        assert fused.i2t_maps.shape == (1, 3, 2, 5, 40)
        assert fused.v_cls_t2i.shape == (3, 32)
        assert fused.v_cls_i2t.shape == (3, 32)

    def test_image_queries_ignore_padding(self, model, inputs):
        images, ids, mask = inputs
        fused = model.fuse(model.encode_image(images), model.encode_text(ids, mask), mask)

        padding = ~mask[:, None, None, :].expand_as(fused.i2t_maps[0])
        assert (fused.i2t_maps[0][padding] == 0).all()

    def test_paths_have_separate_weights(self, model):
        t2i = dict(model.fusion_t2i.named_parameters())
        i2t = dict(model.fusion_i2t.named_parameters())
        assert t2i.keys() == i2t.keys()
        assert all(t2i[k] is not i2t[k] for k in t2i)

    def test_dimension_mismatch(self, model):
        with pytest.raises(ValueError, match="dimension mismatch"):
            model.fuse(torch.randn(2, 5, 32), torch.randn(2, 7, 16))

    def test_batch_mismatch(self, model):
        with pytest.raises(ValueError, match="batch size"):
            model.fuse(torch.randn(2, 5, 32), torch.randn(3, 7, 32))

    def test_single_visible_patch_takes_all_mass(self, model, inputs):
        images, ids, mask = inputs
        image_mask = torch.zeros(3, 5, dtype=torch.bool)
        image_mask[:, 2] = True

        patches, words = model.encode_image(images), model.encode_text(ids, mask)
        fused = model.fuse(patches, words, mask, image_mask)

        assert torch.allclose(fused.t2i_maps[..., 2], torch.ones(1, 3, 2, 40), atol=1e-6)
        assert (fused.t2i_maps[..., [0, 1, 3, 4]] == 0).all()

    def test_cls_invariant_to_patch_order_without_positions(self, tiny_config, vocab, inputs):
        tiny_config.model.positional = False
        model = build_model(tiny_config.model, len(vocab), seed=0).eval()
        images, ids, mask = inputs
        # Swap the upper-left and lower-right patches
        swapped = images.clone()
        swapped[:, :8, :8], swapped[:, 8:, 8:] = images[:, 8:, 8:], images[:, :8, :8]

        with torch.no_grad():
            words = model.encode_text(ids, mask)
            patches = model.encode_image(images)
            moved = model.encode_image(swapped)
            fused = model.fuse(patches, words, mask)
            fused_moved = model.fuse(moved, words, mask)

        assert not torch.allclose(patches[:, 1], moved[:, 1])
        assert torch.allclose(patches[:, 0], moved[:, 0], atol=1e-5)
        assert torch.allclose(fused.v_cls_t2i, fused_moved.v_cls_t2i, atol=1e-5)
        assert torch.allclose(fused.v_cls_i2t, fused_moved.v_cls_i2t, atol=1e-5)
        assert torch.allclose(fused.t2i_maps[..., 1], fused_moved.t2i_maps[..., 4], atol=1e-5)


class TestHeads:
    """Tests for projectors, match head and MLM head."""

    def test_projection_is_unit_norm(self, model, inputs):
        images, ids, mask = inputs
        feat = model.project(model.encode_image(images)[:, 0], "image")
        text = model.project(model.encode_text(ids, mask)[:, 0], "text")

        assert feat.shape == (3, 16)
        assert torch.allclose(feat.norm(dim=-1), torch.ones(3), atol=1e-5)
        assert torch.allclose(text.norm(dim=-1), torch.ones(3), atol=1e-5)

    def test_project_rejects_unknown_modality(self, model):
        with pytest.raises(ValueError):
            model.project(torch.randn(1, 32), "audio")

    def test_zero_vector_normalizes_to_zero(self):
        assert torch.equal(l2_normalize(torch.zeros(2, 4)), torch.zeros(2, 4))

    def test_match_logits(self, model, inputs):
        logits = model.match_logits(*inputs)

        assert logits.shape == (3, 2)
        probability = match_probability(logits)
        assert torch.allclose(probability, torch.sigmoid(match_logit(logits)), atol=1e-6)

    def test_mlm_head(self, model, vocab, inputs):
        images, ids, mask = inputs
        fused = model.fuse(model.encode_image(images), model.encode_text(ids, mask), mask)
        assert model.mlm_head(fused.text).shape == (3, 40, len(vocab))

    def test_temperature_is_clamped(self, model):
        with torch.no_grad():
            model.log_temp.fill_(10.0)
        assert float(model.temperature) == pytest.approx(model.config.temp_max)
        with torch.no_grad():
            model.log_temp.fill_(-10.0)
        assert float(model.temperature) == pytest.approx(model.config.temp_min)


class TestBuildModel:
    """Tests for seeded construction."""

    def test_same_seed_same_weights(self, tiny_config, vocab):
        a = build_model(tiny_config.model, len(vocab), seed=3)
        b = build_model(tiny_config.model, len(vocab), seed=3)

        for (name, p), q in zip(a.state_dict().items(), b.state_dict().values(), strict=True):
            assert torch.equal(p, q), name

    def test_global_rng_untouched(self, tiny_config, vocab):
        torch.manual_seed(123)
        expected = torch.rand(1)
        torch.manual_seed(123)
        build_model(tiny_config.model, len(vocab), seed=0)
        assert torch.equal(torch.rand(1), expected)

    def test_padding_embedding_is_zero(self, tiny_config, vocab):
        model = build_model(tiny_config.model, len(vocab))
        assert (model.text.token_embed.weight[vocab.pad_id] == 0).all()
