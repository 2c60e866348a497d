import unicodedata

import pytest
from hypothesis import given, strategies as st

from muie.model import (
    AudioSegment,
    EntityMention,
    EventRecord,
    GoldAnnotation,
    GroundingRef,
    GroundingTarget,
    ImageMask,
    MediaRef,
    Modality,
    ModalityBundle,
    ModelError,
    PredictionSet,
    Task,
    Tracklet,
    normalize_mention,
)


class TestNormalizeMention:
    def test_strips_whitespace(self):
        assert normalize_mention("  Trump ") == "Trump"

    def test_collapses_internal_runs(self):
        assert normalize_mention("New   York") == "New York"
        assert normalize_mention("a\t\nb") == "a b"

    def test_nfc_normalization(self):
        decomposed = "Café"  # e + combining acute
        expected = unicodedata.normalize("NFC", decomposed)  # independent reference
        assert normalize_mention(decomposed) == expected == "Café"

    def test_case_preserved(self):
        assert normalize_mention("US") == "US"

    @given(st.text(max_size=80))
    def test_idempotent(self, s):
        once = normalize_mention(s)
        assert normalize_mention(once) == once


class TestMaskInvariants:
    def test_sum_must_match(self):
        with pytest.raises(ModelError) as exc:
            ImageMask(2, 2, [1, 1, 1])
        assert exc.value.code == "RLE_SUM_MISMATCH"

    def test_negative_run_rejected(self):
        with pytest.raises(ModelError):
            ImageMask(2, 2, [-1, 5])

    def test_leading_zero_allowed(self):
        mask = ImageMask(2, 2, [0, 4])
        assert sum(mask.rle) == 4

    def test_no_silent_repair(self):
        # even a near-miss is rejected, never padded
        with pytest.raises(ModelError):
            ImageMask(3, 3, [8])


class TestSegmentAndTracklet:
    def test_segment_ordering(self):
        with pytest.raises(ModelError):
            AudioSegment(3.0, 2.0)
        with pytest.raises(ModelError):
            AudioSegment(-1.0, 2.0)
        with pytest.raises(ModelError):
            AudioSegment(2.0, 2.0)

    def test_tracklet_dims_must_agree(self):
        with pytest.raises(ModelError):
            Tracklet({0: ImageMask(2, 2, [4]), 1: ImageMask(3, 3, [9])})

    def test_tracklet_non_empty(self):
        with pytest.raises(ModelError):
            Tracklet({})


class TestGroundingRef:
    def test_payload_must_match_modality(self):
        with pytest.raises(ModelError) as exc:
            GroundingRef(Modality.IMAGE, AudioSegment(0.0, 1.0))
        assert exc.value.code == "PAYLOAD_MISMATCH"

    def test_valid_variants(self):
        GroundingRef(Modality.IMAGE, ImageMask(2, 2, [4]))
        GroundingRef(Modality.AUDIO, AudioSegment(0.0, 1.0))
        GroundingRef(Modality.VIDEO, Tracklet({0: ImageMask(2, 2, [4])}))


class TestModalityBundle:
    def test_requires_a_modality(self):
        with pytest.raises(ModelError):
            ModalityBundle(instance_id="x")

    def test_dimension_checks(self):
        with pytest.raises(ModelError):
            ModalityBundle(instance_id="x", image=MediaRef(path="p", width=0, height=2))
        with pytest.raises(ModelError):
            ModalityBundle(instance_id="x", audio=MediaRef(path="p", duration=0.0))
        with pytest.raises(ModelError):
            ModalityBundle(
                instance_id="x",
                video=MediaRef(path="p", width=2, height=2, frame_count=3, fps=0.0),
            )

    def test_modalities_reported(self):
        bundle = ModalityBundle(instance_id="x", text="t", audio=MediaRef(path="p", duration=1.0))
        assert bundle.modalities() == {Modality.TEXT, Modality.AUDIO}


class TestTupleTypes:
    def test_mention_rejects_padded_surface(self):
        with pytest.raises(ModelError):
            EntityMention(" Trump", "person")
        with pytest.raises(ModelError):
            EntityMention("", "person")

    def test_event_requires_trigger(self):
        with pytest.raises(ModelError):
            EventRecord(trigger="", event_type="Attack")

    def test_task_consistency(self):
        with pytest.raises(ModelError):
            GoldAnnotation(instance_id="x", task=Task.NER, events=[EventRecord("met", "Meet")])

    def test_link_bounds(self):
        mask = GroundingRef(Modality.IMAGE, ImageMask(2, 2, [4]))
        with pytest.raises(ModelError) as exc:
            GoldAnnotation(
                instance_id="x", task=Task.NER,
                entities=[EntityMention("Trump", "person")],
                groundings=[GroundingTarget(mask, link=1)],
            )
        assert exc.value.code == "BAD_LINK_INDEX"

    def test_prediction_collects_payloads_per_modality(self):
        mask_ref = GroundingRef(Modality.IMAGE, ImageMask(2, 2, [0, 4]))
        seg_ref = GroundingRef(Modality.AUDIO, AudioSegment(0.0, 1.0))
        pred = PredictionSet(
            instance_id="x", task=Task.NER,
            entities=[EntityMention("Trump", "person", grounding=mask_ref)],
            extra_groundings=[seg_ref],
        )
        assert pred.grounding_payloads(Modality.IMAGE) == [mask_ref.payload]
        assert pred.grounding_payloads(Modality.AUDIO) == [seg_ref.payload]
        assert pred.grounding_payloads(Modality.VIDEO) == []
