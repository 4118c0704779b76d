import numpy as np
import pytest

from visionassist.backends import (
    FixtureDetectorBackend,
    FixtureEmbedderBackend,
    FixtureFaceDetectorBackend,
    identity_embedding,
)
from visionassist.context_llm import DescriptionResponse
from visionassist.orchestrator import (
    Announcement,
    ButtonPressed,
    DescriptionCompleted,
    DescriptionFailed,
    DispatchDescription,
    DistanceArrived,
    EnrollmentRecorded,
    FrameArrived,
    LabelProvided,
    LatencyRecorded,
    LlmDispatched,
    BuzzerEffect,
    Mode,
    ModeChanged,
    Orchestrator,
    Priority,
    SpeechQueue,
    SpeechStarted,
    Warning,
)
from visionassist.perception import BoundingBox, FaceEmbedding, GroundTruthItem
from visionassist.proximity import DistanceReading
from visionassist.recognition_db import RecognitionDatabase

from conftest import make_frame

FACE_BOX = BoundingBox(0.35, 0.15, 0.65, 0.65)
SMALL_FACE = BoundingBox(0.7, 0.1, 0.8, 0.25)
CHAIR_BOX = BoundingBox(0.4, 0.4, 0.6, 0.8)


def build_orchestrator(db=None):
    return Orchestrator(detector=FixtureDetectorBackend(),
                        face_detector=FixtureFaceDetectorBackend(),
                        embedder=FixtureEmbedderBackend(),
                        db=db or RecognitionDatabase())


def chair_frame(frame_id="room", t=0):
    return make_frame(frame_id=frame_id, timestamp=t,
                      annotations=[GroundTruthItem("object", "chair", CHAIR_BOX)])


def face_frame(face_id="person_x", frame_id="fframe", t=0, extra=None):
    anns = [GroundTruthItem("face", "someone", FACE_BOX, face_id=face_id)]
    if extra:
        anns.extend(extra)
    return make_frame(frame_id=frame_id, timestamp=t, annotations=anns)


def spoken(effects):
    return [e.announcement.text for e in effects if isinstance(e, SpeechStarted)]


class TestCoreTick:
    def test_object_announced_with_spatial_phrase(self):
        orch = build_orchestrator()
        effects = orch.handle_event(FrameArrived(at=100, frame=chair_frame(t=100)))
        assert "chair, ahead" in spoken(effects)

    def test_dedup_within_five_seconds(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=100, frame=chair_frame(t=100)))
        effects = orch.handle_event(FrameArrived(at=4000, frame=chair_frame(t=4000)))
        assert spoken(effects) == []
        assert not any(isinstance(e, LatencyRecorded) for e in effects)

    def test_reannounced_after_window(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=100, frame=chair_frame(t=100)))
        effects = orch.handle_event(FrameArrived(at=5200, frame=chair_frame(t=5200)))
        texts = [e.announcement.text for e in effects if isinstance(e, SpeechStarted)]
        queued = [a.text for q in orch.speech._classes.values() for a in q]
        assert "chair, ahead" in texts + queued

    def test_matched_face_announced(self):
        db = RecognitionDatabase()
        db.enroll("Alice", FaceEmbedding(vector=identity_embedding("person_x")), "voice", 0)
        orch = build_orchestrator(db)
        effects = orch.handle_event(FrameArrived(at=50, frame=face_frame(t=50)))
        assert any("Alice is here" in t for t in spoken(effects))
        announced = [e.announcement for e in effects if isinstance(e, SpeechStarted)]
        assert announced[0].priority == Priority.RECOGNITION

    def test_unmatched_face_silent(self):
        orch = build_orchestrator()
        effects = orch.handle_event(FrameArrived(at=50, frame=face_frame(t=50)))
        assert spoken(effects) == []

    def test_enrolled_object_announced_by_custom_label(self):
        db = RecognitionDatabase()
        db.enroll("my mug", FaceEmbedding(vector=identity_embedding("mug_7")), "text", 0)
        orch = build_orchestrator(db)
        frame = make_frame(annotations=[
            GroundTruthItem("object", "mug", CHAIR_BOX, face_id="mug_7")])
        effects = orch.handle_event(FrameArrived(at=10, frame=frame))
        assert "my mug, ahead" in spoken(effects)

    def test_recognition_latency_recorded(self):
        orch = build_orchestrator()
        effects = orch.handle_event(FrameArrived(at=100, frame=chair_frame(t=100)))
        records = [e for e in effects if isinstance(e, LatencyRecorded)]
        assert records and records[0].path == "recognition"
        assert records[0].duration_ms == 0

    def test_backend_error_throttled_to_one_per_30s(self):
        orch = build_orchestrator()
        orch.detector = FixtureDetectorBackend(fail_with="dead")
        first = orch.handle_event(FrameArrived(at=0, frame=chair_frame(t=0)))
        assert "recognition unavailable" in spoken(first)
        again = orch.handle_event(FrameArrived(at=10_000, frame=chair_frame(t=10_000)))
        assert spoken(again) == []
        later = orch.handle_event(FrameArrived(at=31_000, frame=chair_frame(t=31_000)))
        assert "recognition unavailable" in spoken(later)


class TestProximityPath:
    def test_buzzer_and_proximity_announcement_on_entry(self):
        orch = build_orchestrator()
        effects = orch.handle_event(DistanceArrived(
            at=10, reading=DistanceReading(timestamp=10, meters=0.18)))
        buzz = [e for e in effects if isinstance(e, BuzzerEffect)]
        assert buzz and buzz[0].beep and buzz[0].state == "alerting"
        assert "obstacle very close" in spoken(effects)

    def test_no_repeat_announcement_while_alerting(self):
        orch = build_orchestrator()
        orch.handle_event(DistanceArrived(at=10, reading=DistanceReading(timestamp=10, meters=0.18)))
        effects = orch.handle_event(DistanceArrived(
            at=400, reading=DistanceReading(timestamp=400, meters=0.17)))
        assert "obstacle very close" not in spoken(effects)

    def test_distance_processed_during_enrollment(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=face_frame(t=0)))
        orch.handle_event(ButtonPressed(at=10, button="green"))
        assert orch.mode == Mode.ENROLL_AWAIT_LABEL
        effects = orch.handle_event(DistanceArrived(
            at=20, reading=DistanceReading(timestamp=20, meters=0.15)))
        assert any(isinstance(e, BuzzerEffect) and e.beep for e in effects)


class TestGreenButton:
    def test_face_enrollment_prompt_and_mode(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=face_frame(t=0)))
        effects = orch.handle_event(ButtonPressed(at=100, button="green"))
        assert "who or what is this?" in spoken(effects)
        assert orch.mode == Mode.ENROLL_AWAIT_LABEL
        assert any(isinstance(e, ModeChanged) and e.mode == Mode.ENROLL_AWAIT_LABEL
                   for e in effects)

    def test_no_frame_yet(self):
        orch = build_orchestrator()
        effects = orch.handle_event(ButtonPressed(at=100, button="green"))
        assert "nothing to add" in spoken(effects)
        assert orch.mode == Mode.CORE

    def test_empty_frame(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=make_frame()))
        effects = orch.handle_event(ButtonPressed(at=100, button="green"))
        assert "nothing to add" in spoken(effects)
        assert orch.mode == Mode.CORE

    def test_face_takes_precedence_over_object(self):
        orch = build_orchestrator()
        frame = face_frame(extra=[GroundTruthItem("object", "chair", CHAIR_BOX)])
        orch.handle_event(FrameArrived(at=0, frame=frame))
        orch.handle_event(ButtonPressed(at=100, button="green"))
        orch.handle_event(LabelProvided(at=200, text="Pat", source="voice"))
        # the stored embedding is the face identity, not the chair
        match = orch.db.match(FaceEmbedding(vector=identity_embedding("person_x")))
        assert match.label == "Pat" and match.matched

    def test_largest_face_wins(self):
        orch = build_orchestrator()
        frame = make_frame(annotations=[
            GroundTruthItem("face", "small", SMALL_FACE, face_id="small_id"),
            GroundTruthItem("face", "big", FACE_BOX, face_id="big_id"),
        ])
        orch.handle_event(FrameArrived(at=0, frame=frame))
        orch.handle_event(ButtonPressed(at=100, button="green"))
        orch.handle_event(LabelProvided(at=200, text="Big", source="text"))
        assert orch.db.match(FaceEmbedding(vector=identity_embedding("big_id"))).matched

    def test_object_enrollment_when_no_face(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=chair_frame(t=0)))
        orch.handle_event(ButtonPressed(at=100, button="green"))
        effects = orch.handle_event(LabelProvided(at=200, text="my chair", source="text"))
        enrollments = [e for e in effects if isinstance(e, EnrollmentRecorded)]
        assert enrollments[0].kind == "object"

    def test_green_during_enrollment_warns(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=face_frame(t=0)))
        orch.handle_event(ButtonPressed(at=100, button="green"))
        effects = orch.handle_event(ButtonPressed(at=200, button="green"))
        assert any(isinstance(e, Warning) for e in effects)
        assert orch.mode == Mode.ENROLL_AWAIT_LABEL


class TestLabelHandling:
    def _enrolling(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=face_frame(t=0)))
        orch.handle_event(ButtonPressed(at=100, button="green"))
        return orch

    def test_success_returns_to_core_and_recognizes(self):
        orch = self._enrolling()
        effects = orch.handle_event(LabelProvided(at=200, text="Alice", source="voice"))
        assert "added Alice" in spoken(effects) or any(
            a.text == "added Alice" for q in orch.speech._classes.values() for a in q)
        assert orch.mode == Mode.CORE
        later = orch.handle_event(FrameArrived(at=9000, frame=face_frame(t=9000)))
        texts = spoken(later) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "Alice is here" in texts

    def test_source_recorded(self):
        orch = self._enrolling()
        orch.handle_event(LabelProvided(at=200, text="Vee", source="voice"))
        assert orch.db._records["Vee"].source == "voice"

    def test_empty_label_retries_once_then_cancels(self):
        orch = self._enrolling()
        first = orch.handle_event(LabelProvided(at=200, text="  ", source="voice"))
        assert "I did not catch that" in spoken(first) or any(
            a.text == "I did not catch that" for q in orch.speech._classes.values() for a in q)
        assert orch.mode == Mode.ENROLL_AWAIT_LABEL
        second = orch.handle_event(LabelProvided(at=300, text="", source="voice"))
        texts = spoken(second) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "cancelled" in texts
        assert orch.mode == Mode.CORE
        assert orch.db.list_labels() == []

    def test_timeout_cancels_enrollment(self):
        orch = self._enrolling()
        effects = orch.advance_to(100 + 30_000)
        texts = spoken(effects) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "cancelled" in texts
        assert orch.mode == Mode.CORE

    def test_label_after_timeout_is_ignored(self):
        orch = self._enrolling()
        orch.advance_to(100 + 30_000)
        effects = orch.handle_event(LabelProvided(at=31_000, text="Too late", source="text"))
        assert any(isinstance(e, Warning) for e in effects)
        assert orch.db.list_labels() == []

    def test_label_in_core_mode_warns(self):
        orch = build_orchestrator()
        effects = orch.handle_event(LabelProvided(at=10, text="Ghost", source="text"))
        assert any(isinstance(e, Warning) for e in effects)
        assert orch.db.list_labels() == []

    def test_enrollment_augments_three_variants(self):
        orch = self._enrolling()
        orch.handle_event(LabelProvided(at=200, text="Zed", source="text"))
        assert len(orch.db._records["Zed"].entries[0].derived) == 3

    def test_scanning_suspended_while_awaiting_label(self):
        orch = self._enrolling()
        effects = orch.handle_event(FrameArrived(at=500, frame=chair_frame(t=500)))
        assert spoken(effects) == []
        assert not any(isinstance(e, LatencyRecorded) for e in effects)


class TestBlueButton:
    def _with_frame(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=chair_frame(t=0)))
        return orch

    def test_dispatch_and_pending_mode(self):
        orch = self._with_frame()
        effects = orch.handle_event(ButtonPressed(at=100, button="blue"))
        dispatches = [e for e in effects if isinstance(e, DispatchDescription)]
        assert len(dispatches) == 1
        request = dispatches[0].request
        assert request.image is not None
        assert request.context.image_attached
        assert any(isinstance(e, LlmDispatched) and e.image_attached for e in effects)
        assert orch.mode == Mode.DESCRIBE_PENDING

    def test_second_press_while_pending(self):
        orch = self._with_frame()
        orch.handle_event(ButtonPressed(at=100, button="blue"))
        effects = orch.handle_event(ButtonPressed(at=200, button="blue"))
        texts = spoken(effects) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "please wait" in texts
        assert not any(isinstance(e, DispatchDescription) for e in effects)

    def test_completion_announces_and_records_latency(self):
        orch = self._with_frame()
        dispatch = [e for e in orch.handle_event(ButtonPressed(at=100, button="blue"))
                    if isinstance(e, DispatchDescription)][0]
        response = DescriptionResponse(request_id=dispatch.request.request_id,
                                       text="a chair ahead", latency_ms=4000, backend="mock")
        effects = orch.handle_event(DescriptionCompleted(at=4100, response=response))
        texts = spoken(effects) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "a chair ahead" in texts
        records = [e for e in effects if isinstance(e, LatencyRecorded)]
        assert records[0].path == "detail"
        assert records[0].duration_ms == 4000
        assert orch.mode == Mode.CORE

    def test_failure_announces_unavailable(self):
        orch = self._with_frame()
        dispatch = [e for e in orch.handle_event(ButtonPressed(at=100, button="blue"))
                    if isinstance(e, DispatchDescription)][0]
        effects = orch.handle_event(DescriptionFailed(
            at=500, request_id=dispatch.request.request_id, reason="timeout"))
        texts = spoken(effects) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "description unavailable" in texts
        assert orch.mode == Mode.CORE

    def test_stale_completion_dropped(self):
        orch = self._with_frame()
        orch.handle_event(ButtonPressed(at=100, button="blue"))
        stale = DescriptionResponse(request_id="desc-999", text="old", latency_ms=1, backend="mock")
        effects = orch.handle_event(DescriptionCompleted(at=200, response=stale))
        assert any(isinstance(e, Warning) for e in effects)
        assert orch.mode == Mode.DESCRIBE_PENDING

    def test_no_frame_never_dispatches(self):
        orch = build_orchestrator()
        effects = orch.handle_event(ButtonPressed(at=100, button="blue"))
        assert "nothing to describe" in spoken(effects)
        assert not any(isinstance(e, DispatchDescription) for e in effects)

    def test_scanning_continues_while_pending(self):
        orch = self._with_frame()
        orch.handle_event(ButtonPressed(at=100, button="blue"))
        effects = orch.handle_event(FrameArrived(at=6000, frame=chair_frame("room2", 6000)))
        texts = spoken(effects) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "chair, ahead" in texts  # dedup window from t=0 has passed

    def test_green_while_pending_rejected(self):
        orch = self._with_frame()
        orch.handle_event(ButtonPressed(at=100, button="blue"))
        effects = orch.handle_event(ButtonPressed(at=200, button="green"))
        texts = spoken(effects) + [a.text for q in orch.speech._classes.values() for a in q]
        assert "please wait" in texts
        assert orch.mode == Mode.DESCRIBE_PENDING


class TestSpeechQueue:
    def test_priority_order(self):
        q = SpeechQueue()
        rec = Announcement("rec", Priority.RECOGNITION, 0)
        prox = Announcement("prox", Priority.PROXIMITY, 1)
        q.push(rec)
        q.push(prox)
        assert q.pop_next() is prox
        assert q.pop_next() is rec

    def test_fifo_within_priority(self):
        q = SpeechQueue()
        a = Announcement("a", Priority.RECOGNITION, 0)
        b = Announcement("b", Priority.RECOGNITION, 5)
        q.push(a)
        q.push(b)
        assert q.pop_next() is a

    def test_proximity_preempts_and_requeues_front(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=chair_frame(t=0)))
        assert orch.speech.speaking.announcement.text == "chair, ahead"
        effects = orch.handle_event(DistanceArrived(
            at=100, reading=DistanceReading(timestamp=100, meters=0.1)))
        assert orch.speech.speaking.announcement.text == "obstacle very close"
        # interrupted announcement sits at the front of its class
        assert orch.speech._classes[Priority.RECOGNITION][0].text == "chair, ahead"
        # and is re-spoken when the alert finishes
        later = orch.advance_to(100 + 60 * len("obstacle very close"))
        assert "chair, ahead" in spoken(later)

    def test_proximity_does_not_preempt_proximity(self):
        orch = build_orchestrator()
        orch.handle_event(DistanceArrived(at=0, reading=DistanceReading(timestamp=0, meters=0.1)))
        assert orch.speech.speaking.announcement.text == "obstacle very close"
        orch.handle_event(DistanceArrived(at=300, reading=DistanceReading(timestamp=300, meters=0.3)))
        orch.handle_event(DistanceArrived(at=400, reading=DistanceReading(timestamp=400, meters=0.1)))
        # second alert announcement queued, original still playing
        assert orch.speech.speaking.announcement.created_at == 0

    def test_utterance_duration_is_60ms_per_char(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=0, frame=chair_frame(t=0)))
        speaking = orch.speech.speaking
        assert speaking.ends_at - speaking.started_at == 60 * len("chair, ahead")


class TestTelemetry:
    def test_summary_means(self):
        orch = build_orchestrator()
        orch.handle_event(FrameArrived(at=100, frame=chair_frame(t=100)))
        summary = orch.telemetry.summary()
        assert summary["recognition"]["count"] == 1
        assert summary["recognition"]["mean_ms"] == 0.0
        assert summary["detail"]["count"] == 0
        assert summary["detail"]["mean_ms"] is None
