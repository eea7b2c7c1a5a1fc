"""Tests for xvl data models."""

from datetime import datetime, timezone

UTC = timezone.utc

import numpy as np
import pytest

from xvl.models.error_record import INJECTED_TYPES, ErrorRecord, ErrorType
from xvl.models.metric_report import MetricReport
from xvl.models.run import RunManifest, StepRecord
from xvl.models.scores import AttentionHeatmap, CorrectionResult, DetectionScore, Substitution
from xvl.models.study import NO_FINDING, FindingSpec, SyntheticStudy
from xvl.models.vocabulary import SPECIAL_TOKENS, Vocabulary


class TestFindingSpec:
    """Tests for FindingSpec model."""

    def test_present_finding(self):
        spec = FindingSpec("atrex", ("left", "upper"), "small")
        assert spec.quadrant == (0, 0)
        assert FindingSpec("atrex", ("right", "lower"), "large").quadrant == (1, 1)

    def test_absent_finding(self):
        spec = FindingSpec.absent()
        assert spec.class_id == NO_FINDING
        assert spec.present is False
        with pytest.raises(ValueError):
            _ = spec.quadrant

    def test_invalid_specs(self):
        """Test that incomplete or unknown specs are rejected."""
        with pytest.raises(ValueError, match="Unknown finding class"):
            FindingSpec("pneumonia", ("left", "upper"), "small")
        with pytest.raises(ValueError, match="needs location and extent"):
            FindingSpec("atrex")
        with pytest.raises(ValueError, match="Invalid location"):
            FindingSpec("atrex", ("middle", "upper"), "small")
        with pytest.raises(ValueError, match="Invalid extent"):
            FindingSpec("atrex", ("left", "upper"), "huge")
        with pytest.raises(ValueError):
            FindingSpec(NO_FINDING)

    def test_dict_round_trip(self):
        spec = FindingSpec("corda", ("right", "upper"), "large")
        assert FindingSpec.from_dict(spec.to_dict()) == spec


class TestSyntheticStudy:
    """Tests for SyntheticStudy model."""

    def _study(self, findings):
        return SyntheticStudy("s-1", np.zeros((16, 16)), ["No evidence of abnormality."], findings)

    def test_normal_study(self):
        study = self._study([])
        assert study.is_normal is True
        assert study.label_classes == frozenset({NO_FINDING})
        assert study.primary_class == NO_FINDING

    def test_abnormal_study(self):
        study = self._study(
            [
                FindingSpec("effra", ("left", "lower"), "small"),
                FindingSpec("atrex", ("right", "upper"), "large"),
            ]
        )
        assert study.is_normal is False
        assert study.label_classes == frozenset({"effra", "atrex"})
        assert study.primary_class == "effra"

    def test_with_report_shares_image(self):
        study = self._study([])
        other = study.with_report(["There is small atrex in the left upper zone."])

        assert other.image is study.image
        assert other.study_id == study.study_id
        assert study.report == ["No evidence of abnormality."]

    def test_dict_round_trip(self):
        image = np.arange(256, dtype=np.float64).reshape(16, 16) / 256
        study = SyntheticStudy(
            "s-2", image, ["There is small atrex in the left upper zone."],
            [FindingSpec("atrex", ("left", "upper"), "small")],
        )

        data = study.to_dict()
        restored = SyntheticStudy.from_dict(data)

        assert data["image"]["dims"] == [16, 16]
        assert np.array_equal(restored.image, image)
        assert restored.report == study.report
        assert restored.findings == study.findings


class TestVocabulary:
    """Tests for Vocabulary model."""

    def test_special_ids(self):
        vocab = Vocabulary.from_words(["there", "is", "atrex"])

        assert vocab.tokens[:5] == SPECIAL_TOKENS
        assert (vocab.pad_id, vocab.unk_id, vocab.cls_id, vocab.sep_id, vocab.mask_id) == (
            0, 1, 2, 3, 4,
        )
        assert vocab.first_regular_id == 5
        assert len(vocab) == 8

    def test_regular_words_sorted(self):
        vocab = Vocabulary.from_words({"zone", "atrex", "is"})
        assert vocab.tokens[5:] == ("atrex", "is", "zone")

    def test_unknown_maps_to_unk(self):
        vocab = Vocabulary.from_words(["atrex"])
        assert vocab.id("atrex") == 5
        assert vocab.id("pneumonia") == vocab.unk_id
        assert "atrex" in vocab
        assert "pneumonia" not in vocab

    def test_must_start_with_specials(self):
        with pytest.raises(ValueError):
            Vocabulary(("atrex", "is"))

    def test_save_load(self, temp_dir):
        vocab = Vocabulary.from_words(["there", "is", "small", "."])
        path = temp_dir / "vocab.txt"
        vocab.save(path)

        assert Vocabulary.load(path) == vocab


class TestErrorRecord:
    """Tests for ErrorRecord model."""

    def test_injected_types(self):
        assert ErrorType.NONE not in INJECTED_TYPES
        assert len(INJECTED_TYPES) == 5

    def test_none_requires_unchanged_report(self):
        report = ["No evidence of abnormality."]
        record = ErrorRecord(ErrorType.NONE, report, list(report))
        assert record.is_error is False

        with pytest.raises(ValueError):
            ErrorRecord(ErrorType.NONE, report, ["There is small atrex in the left upper zone."])

    def test_error_requires_changed_report(self):
        report = ["No evidence of abnormality."]
        with pytest.raises(ValueError):
            ErrorRecord(ErrorType.MISMATCH, report, list(report))

    def test_location_requires_position(self):
        original = ["There is small atrex in the left upper zone."]
        corrupted = ["There is small atrex in the right upper zone."]
        with pytest.raises(ValueError, match="position"):
            ErrorRecord(ErrorType.LOCATION, original, corrupted)

        record = ErrorRecord(ErrorType.LOCATION, original, corrupted, [6])
        assert record.is_error is True

    def test_dict_round_trip(self):
        record = ErrorRecord(
            ErrorType.FALSE_POSITIVE,
            ["No evidence of abnormality."],
            ["There is large corda in the left lower zone."],
            source_study_id="s0-000003",
        )
        data = record.to_dict()

        assert data["error_type"] == "false_positive"
        assert ErrorRecord.from_dict(data) == record


class TestRunModels:
    """Tests for RunManifest and StepRecord."""

    def test_manifest_round_trip(self):
        manifest = RunManifest(
            command="gen-data",
            config={"n_studies": 10},
            seed=3,
            inputs={"mix": "uniform"},
            outputs={"train": "data/train.jsonl"},
            created_at=datetime(2026, 1, 10, tzinfo=UTC),
        )

        restored = RunManifest.from_dict(manifest.to_dict())

        assert restored == manifest

    def _record(self, **kwargs):
        values = {
            "step": 0, "cmc": 1.0, "imc": 0.5, "sent": 0.25, "mlm": 2.0, "itm": 0.75,
            "dist": 0.1, "total": 0.0, "tau": 0.07,
        }
        return StepRecord(**{**values, **kwargs})

    def test_step_record_base(self):
        assert self._record().base == pytest.approx(4.5)

    def test_recombined_total(self):
        """Test the logged total is recoverable from the logged terms."""
        record = self._record(lambda_dist=0.4)
        assert record.recombined_total() == pytest.approx(0.6 * 4.5 + 0.4 * 0.1)
        assert record.recombined_total(0.0) == pytest.approx(4.5)
        assert record.recombined_total(1.0) == pytest.approx(0.1)

    def test_step_record_round_trip(self):
        record = self._record(step=4, epoch=1, lr=1e-4, lambda_dist=0.4, fallbacks=2)
        assert StepRecord.from_dict(record.to_dict()) == record


class TestMetricReport:
    """Tests for MetricReport model."""

    def test_interval_ordering(self):
        with pytest.raises(ValueError):
            MetricReport("auc", 0.8, 0.9, 0.7, 100, 0.05)

    def test_estimate_outside_ci_is_flagged(self):
        report = MetricReport("auc", 0.95, 0.7, 0.9, 100, 0.05)
        assert report.estimate_outside_ci is True
        assert report.to_dict()["estimate_outside_ci"] is True
        assert report.width == pytest.approx(0.2)

    def test_dict_round_trip_with_resamples(self):
        report = MetricReport(
            "f1", 0.5, 0.4, 0.6, 2, 0.05, seed=1, subject="atrex", mode="simple",
            threshold=0.3, sample_ids=("a", "b"), resamples=(0.45, 0.55),
        )

        assert "resamples" not in report.to_dict()
        assert MetricReport.from_dict(report.to_dict(include_resamples=True)) == report


class TestScoreModels:
    """Tests for zero-shot output models."""

    def test_detection_score_range(self):
        with pytest.raises(ValueError):
            DetectionScore("s", 1.2, "simple")

    def test_detection_score_dict(self):
        score = DetectionScore("s", 0.3, "detailed", "bolvine", 1)
        data = score.to_dict()

        assert data["class"] == "bolvine"
        assert DetectionScore.from_dict(data) == score

    def test_correction_result_changed(self):
        assert CorrectionResult(["x"]).changed is False
        assert CorrectionResult(["x"], [Substitution(6, "left", "right", 0.9)]).changed is True

    def test_heatmap_validation(self):
        maps = np.ones((2, 16, 16))
        heatmap = AttentionHeatmap(["left", "upper"], [6, 7], maps)
        assert heatmap.for_word("upper").shape == (16, 16)

        with pytest.raises(ValueError):
            AttentionHeatmap(["left"], [6], maps)
        with pytest.raises(ValueError):
            AttentionHeatmap(["left"], [6], -np.ones((1, 16, 16)))
