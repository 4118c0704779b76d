"""Single event loop tying recognition, enrollment, description, proximity
alerting, and the priority speech queue together.

All inputs arrive as timestamped events processed in order; all outputs are
effect objects. The orchestrator never touches a wall clock, which is what
makes simulated runs byte-reproducible.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional

from . import proximity
from .backends import (
    DetectorBackend,
    EmbedderBackend,
    FaceDetectorBackend,
    detect_faces,
    detect_objects,
    embed_face,
)
from .context_llm import (
    DescriptionRequest,
    DescriptionResponse,
    SceneContext,
    build_context,
    format_for_speech,
    spatial_phrase,
)
from .errors import DetectionBackendError, EmbeddingBackendError, InvalidLabelError
from .perception import BoundingBox, Detection, FaceEmbedding, Frame, preprocess
from .proximity import AlertMode, AlertState, DistanceReading
from .recognition_db import MatchResult, RecognitionDatabase

MS_PER_CHAR = 60
DEDUP_WINDOW_MS = 5_000
ENROLL_TIMEOUT_MS = 30_000
ERROR_ANNOUNCE_INTERVAL_MS = 30_000
AUGMENT_ON_ENROLL = 3

PROMPT_WHO = "who or what is this?"
PROMPT_NOTHING_TO_ADD = "nothing to add"
PROMPT_NOTHING_TO_DESCRIBE = "nothing to describe"
PROMPT_PLEASE_WAIT = "please wait"
PROMPT_CANCELLED = "cancelled"
PROMPT_RETRY_LABEL = "I did not catch that"
PROMPT_RECOGNITION_DOWN = "recognition unavailable"
PROMPT_DESCRIPTION_DOWN = "description unavailable"
PROMPT_OBSTACLE = "obstacle very close"


class Mode(str, Enum):
    CORE = "core"
    ENROLL_AWAIT_LABEL = "enroll_await_label"
    DESCRIBE_PENDING = "describe_pending"


class Priority(IntEnum):
    PROXIMITY = 0
    DESCRIPTION = 1
    RECOGNITION = 2


# -- input events -------------------------------------------------------------


@dataclass(frozen=True)
class InputEvent:
    at: int


@dataclass(frozen=True)
class FrameArrived(InputEvent):
    frame: Frame


@dataclass(frozen=True)
class DistanceArrived(InputEvent):
    reading: DistanceReading


@dataclass(frozen=True)
class ButtonPressed(InputEvent):
    button: str  # "green" | "blue"


@dataclass(frozen=True)
class LabelProvided(InputEvent):
    text: str
    source: str  # "voice" | "text"


@dataclass(frozen=True)
class DescriptionCompleted(InputEvent):
    response: DescriptionResponse


@dataclass(frozen=True)
class DescriptionFailed(InputEvent):
    request_id: str
    reason: str


# -- effects -------------------------------------------------------------------


@dataclass(frozen=True)
class Announcement:
    text: str
    priority: Priority
    created_at: int
    dedup_key: Optional[str] = None


@dataclass(frozen=True)
class Effect:
    at: int


@dataclass(frozen=True)
class SpeechStarted(Effect):
    """An announcement began playing on the speech channel."""

    announcement: Announcement


@dataclass(frozen=True)
class BuzzerEffect(Effect):
    beep: bool
    state: str  # alert mode after this reading
    meters: float


@dataclass(frozen=True)
class ModeChanged(Effect):
    previous: Mode
    mode: Mode


@dataclass(frozen=True)
class DetectionsEffect(Effect):
    frame: Frame
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class EnrollmentRecorded(Effect):
    label: str
    source: str
    kind: str  # "face" | "object"


@dataclass(frozen=True)
class LatencyRecorded(Effect):
    path: str  # "recognition" | "detail"
    duration_ms: int

    @property
    def seconds(self) -> float:
        return self.duration_ms / 1000.0


@dataclass(frozen=True)
class LlmDispatched(Effect):
    request_id: str
    image_attached: bool


@dataclass(frozen=True)
class LlmCompleted(Effect):
    request_id: str
    latency_ms: int
    text: str
    backend: str


@dataclass(frozen=True)
class DispatchDescription(Effect):
    """Consumed by the runner: perform the LVLM call off-loop and feed the
    completion back as a DescriptionCompleted/DescriptionFailed event."""

    request: DescriptionRequest


@dataclass(frozen=True)
class Warning(Effect):
    text: str


# -- speech queue --------------------------------------------------------------


@dataclass
class _Speaking:
    announcement: Announcement
    started_at: int
    ends_at: int
    token: int


class SpeechQueue:
    """Priority speech channel: pops by (priority, created_at); a PROXIMITY
    announcement preempts a playing lower-priority utterance, which is
    re-queued at the front of its priority class."""

    def __init__(self):
        self._classes: dict[Priority, list[Announcement]] = {p: [] for p in Priority}
        self.speaking: Optional[_Speaking] = None

    def pending_count(self) -> int:
        return sum(len(q) for q in self._classes.values())

    def push(self, ann: Announcement) -> None:
        self._classes[ann.priority].append(ann)

    def push_front(self, ann: Announcement) -> None:
        self._classes[ann.priority].insert(0, ann)

    def pop_next(self) -> Optional[Announcement]:
        for p in sorted(self._classes):
            if self._classes[p]:
                return self._classes[p].pop(0)
        return None


# -- orchestrator ---------------------------------------------------------------


@dataclass
class Telemetry:
    records: list[LatencyRecorded] = field(default_factory=list)

    def add(self, record: LatencyRecorded) -> None:
        self.records.append(record)

    def summary(self) -> dict:
        out: dict = {}
        for path in ("recognition", "detail"):
            durations = [r.duration_ms for r in self.records if r.path == path]
            out[path] = {
                "count": len(durations),
                "mean_ms": (sum(durations) / len(durations)) if durations else None,
            }
        return out


class Orchestrator:
    def __init__(self, detector: DetectorBackend, face_detector: FaceDetectorBackend,
                 embedder: EmbedderBackend, db: RecognitionDatabase,
                 llm_timeout_ms: int = 10_000):
        self.detector = detector
        self.face_detector = face_detector
        self.embedder = embedder
        self.db = db
        self.llm_timeout_ms = llm_timeout_ms

        self.mode = Mode.CORE
        self.alert_state = AlertState()
        self.speech = SpeechQueue()
        self.telemetry = Telemetry()

        self.latest_frame: Optional[Frame] = None
        self.latest_distance: Optional[float] = None

        self._now = 0
        self._dedup_last: dict[str, int] = {}
        self._timers: list[tuple[int, int, str, int]] = []  # (due, seq, kind, token)
        self._timer_seq = 0
        self._enroll_token = 0
        self._pending_embedding: Optional[FaceEmbedding] = None
        self._pending_kind = ""
        self._label_retry_used = False
        self._pending_request_id: Optional[str] = None
        self._describe_pressed_at = 0
        self._request_counter = 0
        self._last_error_announce: Optional[int] = None
        self._utterance_token = 0

    # -- timers ----------------------------------------------------------------

    def _schedule(self, due: int, kind: str, token: int = 0) -> None:
        self._timer_seq += 1
        heapq.heappush(self._timers, (due, self._timer_seq, kind, token))

    def peek_next_timer(self) -> Optional[int]:
        return self._timers[0][0] if self._timers else None

    def advance_to(self, now: int) -> list[Effect]:
        """Fire all timers due at or before `now` in order."""
        effects: list[Effect] = []
        while self._timers and self._timers[0][0] <= now:
            due, _, kind, token = heapq.heappop(self._timers)
            self._now = max(self._now, due)
            if kind == "utterance_end":
                self._finish_utterance(due, token, effects)
            elif kind == "enroll_timeout":
                self._enroll_timed_out(due, token, effects)
        self._now = max(self._now, now)
        return effects

    # -- event dispatch ----------------------------------------------------------

    def handle_event(self, event: InputEvent) -> list[Effect]:
        effects = self.advance_to(event.at)
        now = event.at
        if isinstance(event, FrameArrived):
            self.latest_frame = event.frame
            if self.mode != Mode.ENROLL_AWAIT_LABEL:
                self._core_tick(event.frame, now, effects)
        elif isinstance(event, DistanceArrived):
            self._distance_tick(event.reading, now, effects)
        elif isinstance(event, ButtonPressed):
            if event.button == "green":
                self._handle_green(now, effects)
            else:
                self._handle_blue(now, effects)
        elif isinstance(event, LabelProvided):
            self._handle_label(event.text, event.source, now, effects)
        elif isinstance(event, DescriptionCompleted):
            self._handle_description_completed(event.response, now, effects)
        elif isinstance(event, DescriptionFailed):
            self._handle_description_failed(event.request_id, now, effects)
        return effects

    # -- speech ------------------------------------------------------------------

    def _start_utterance(self, ann: Announcement, now: int, effects: list[Effect]) -> None:
        ends = now + MS_PER_CHAR * len(ann.text)
        self._utterance_token += 1
        self.speech.speaking = _Speaking(announcement=ann, started_at=now, ends_at=ends,
                                         token=self._utterance_token)
        self._schedule(ends, "utterance_end", self._utterance_token)
        effects.append(SpeechStarted(at=now, announcement=ann))

    def _finish_utterance(self, now: int, token: int, effects: list[Effect]) -> None:
        current = self.speech.speaking
        if current is None or current.token != token:
            return  # stale timer from a preempted utterance
        self.speech.speaking = None
        nxt = self.speech.pop_next()
        if nxt is not None:
            self._start_utterance(nxt, now, effects)

    def _announce(self, text: str, priority: Priority, now: int,
                  effects: list[Effect], dedup_key: Optional[str] = None) -> bool:
        """Queue an announcement; returns False when suppressed by the
        5-second per-label debounce."""
        if dedup_key is not None:
            last = self._dedup_last.get(dedup_key)
            if last is not None and now - last < DEDUP_WINDOW_MS:
                return False
            self._dedup_last[dedup_key] = now
        ann = Announcement(text=text, priority=priority, created_at=now, dedup_key=dedup_key)
        current = self.speech.speaking
        if current is None:
            self._start_utterance(ann, now, effects)
        elif priority == Priority.PROXIMITY and current.announcement.priority > Priority.PROXIMITY:
            self.speech.push_front(current.announcement)
            self.speech.speaking = None  # its end timer becomes stale
            self._start_utterance(ann, now, effects)
        else:
            self.speech.push(ann)
        return True

    def _announce_error(self, text: str, now: int, effects: list[Effect]) -> None:
        last = self._last_error_announce
        if last is not None and now - last < ERROR_ANNOUNCE_INTERVAL_MS:
            return
        self._last_error_announce = now
        self._announce(text, Priority.DESCRIPTION, now, effects)

    # -- perception pipeline -------------------------------------------------------

    def _scan(self, frame: Frame) -> tuple[list[Detection], list[tuple[BoundingBox, MatchResult]]]:
        image = preprocess(frame)
        detections = detect_objects(self.detector, image)
        faces = detect_faces(self.face_detector, frame)
        matches = []
        for box in faces:
            embedding = embed_face(self.embedder, frame, box)
            matches.append((box, self.db.match(embedding)))
        return detections, matches

    def _core_tick(self, frame: Frame, now: int, effects: list[Effect]) -> None:
        try:
            detections, face_matches = self._scan(frame)
        except (DetectionBackendError, EmbeddingBackendError):
            self._announce_error(PROMPT_RECOGNITION_DOWN, now, effects)
            return
        effects.append(DetectionsEffect(at=now, frame=frame, detections=tuple(detections)))
        for det in detections:
            label = det.label
            try:
                crop_match = self.db.match(embed_face(self.embedder, frame, det.box))
                if crop_match.matched:
                    label = crop_match.label  # enrolled custom label wins
            except EmbeddingBackendError:
                pass
            if self._announce(f"{label}, {spatial_phrase(det.box)}", Priority.RECOGNITION,
                              now, effects, dedup_key=label):
                record = LatencyRecorded(at=now, path="recognition",
                                         duration_ms=now - frame.timestamp)
                self.telemetry.add(record)
                effects.append(record)
        for _box, match in face_matches:
            if not match.matched:
                continue
            if self._announce(f"{match.label} is here", Priority.RECOGNITION,
                              now, effects, dedup_key=match.label):
                record = LatencyRecorded(at=now, path="recognition",
                                         duration_ms=now - frame.timestamp)
                self.telemetry.add(record)
                effects.append(record)

    def _distance_tick(self, reading: DistanceReading, now: int, effects: list[Effect]) -> None:
        self.latest_distance = reading.distance_m
        previous = self.alert_state.mode
        self.alert_state, beeps = proximity.update(self.alert_state, reading, now)
        if beeps or self.alert_state.mode != previous:
            effects.append(BuzzerEffect(at=now, beep=bool(beeps),
                                        state=self.alert_state.mode.value,
                                        meters=reading.distance_m))
        if previous == AlertMode.QUIET and self.alert_state.mode == AlertMode.ALERTING:
            self._announce(PROMPT_OBSTACLE, Priority.PROXIMITY, now, effects)

    # -- buttons ----------------------------------------------------------------

    def _set_mode(self, mode: Mode, now: int, effects: list[Effect]) -> None:
        if mode == self.mode:
            return
        effects.append(ModeChanged(at=now, previous=self.mode, mode=mode))
        self.mode = mode

    def _handle_green(self, now: int, effects: list[Effect]) -> None:
        if self.mode == Mode.DESCRIBE_PENDING:
            self._announce(PROMPT_PLEASE_WAIT, Priority.DESCRIPTION, now, effects)
            return
        if self.mode == Mode.ENROLL_AWAIT_LABEL:
            effects.append(Warning(at=now, text="green press ignored: already enrolling"))
            return
        frame = self.latest_frame
        if frame is None:
            self._announce(PROMPT_NOTHING_TO_ADD, Priority.DESCRIPTION, now, effects)
            return
        try:
            faces = detect_faces(self.face_detector, frame)
            if faces:
                target_box = max(faces, key=lambda b: b.area)
                kind = "face"
            else:
                detections = detect_objects(self.detector, preprocess(frame))
                if not detections:
                    self._announce(PROMPT_NOTHING_TO_ADD, Priority.DESCRIPTION, now, effects)
                    return
                target_box = max(detections, key=lambda d: d.confidence).box
                kind = "object"
            embedding = embed_face(self.embedder, frame, target_box)
        except (DetectionBackendError, EmbeddingBackendError):
            self._announce_error(PROMPT_RECOGNITION_DOWN, now, effects)
            return
        self._pending_embedding = embedding
        self._pending_kind = kind
        self._label_retry_used = False
        self._enroll_token += 1
        self._schedule(now + ENROLL_TIMEOUT_MS, "enroll_timeout", self._enroll_token)
        self._announce(PROMPT_WHO, Priority.DESCRIPTION, now, effects)
        self._set_mode(Mode.ENROLL_AWAIT_LABEL, now, effects)

    def _cancel_enrollment(self, now: int, effects: list[Effect]) -> None:
        self._pending_embedding = None
        self._enroll_token += 1  # invalidates the outstanding timeout
        self._announce(PROMPT_CANCELLED, Priority.DESCRIPTION, now, effects)
        self._set_mode(Mode.CORE, now, effects)

    def _enroll_timed_out(self, now: int, token: int, effects: list[Effect]) -> None:
        if self.mode != Mode.ENROLL_AWAIT_LABEL or token != self._enroll_token:
            return
        self._cancel_enrollment(now, effects)

    def _handle_label(self, text: str, source: str, now: int, effects: list[Effect]) -> None:
        if self.mode != Mode.ENROLL_AWAIT_LABEL:
            effects.append(Warning(at=now, text="label ignored: no enrollment in progress"))
            return
        label = text.strip()
        if not label:
            if self._label_retry_used:
                self._cancel_enrollment(now, effects)
            else:
                self._label_retry_used = True
                self._announce(PROMPT_RETRY_LABEL, Priority.DESCRIPTION, now, effects)
            return
        try:
            self.db.enroll(label, self._pending_embedding, source, now,
                           augment_n=AUGMENT_ON_ENROLL)
        except InvalidLabelError:
            self._announce(PROMPT_RETRY_LABEL, Priority.DESCRIPTION, now, effects)
            return
        effects.append(EnrollmentRecorded(at=now, label=label, source=source,
                                          kind=self._pending_kind))
        self._pending_embedding = None
        self._enroll_token += 1
        self._announce(f"added {label}", Priority.DESCRIPTION, now, effects)
        self._set_mode(Mode.CORE, now, effects)

    def _handle_blue(self, now: int, effects: list[Effect]) -> None:
        if self.mode == Mode.DESCRIBE_PENDING:
            self._announce(PROMPT_PLEASE_WAIT, Priority.DESCRIPTION, now, effects)
            return
        if self.mode == Mode.ENROLL_AWAIT_LABEL:
            self._announce(PROMPT_PLEASE_WAIT, Priority.DESCRIPTION, now, effects)
            return
        frame = self.latest_frame
        if frame is None:
            self._announce(PROMPT_NOTHING_TO_DESCRIBE, Priority.DESCRIPTION, now, effects)
            return
        try:
            detections, face_matches = self._scan(frame)
        except (DetectionBackendError, EmbeddingBackendError):
            detections, face_matches = [], []
        context = build_context(detections, [m for _, m in face_matches],
                                self.latest_distance, now, image_attached=True)
        self._request_counter += 1
        request_id = f"desc-{self._request_counter}"
        request = DescriptionRequest(context=context, image=frame, request_id=request_id)
        self._pending_request_id = request_id
        self._describe_pressed_at = now
        effects.append(LlmDispatched(at=now, request_id=request_id, image_attached=True))
        effects.append(DispatchDescription(at=now, request=request))
        self._set_mode(Mode.DESCRIBE_PENDING, now, effects)

    def _handle_description_completed(self, response: DescriptionResponse, now: int,
                                      effects: list[Effect]) -> None:
        if response.request_id != self._pending_request_id:
            effects.append(Warning(at=now, text=f"stale description {response.request_id} dropped"))
            return
        self._pending_request_id = None
        effects.append(LlmCompleted(at=now, request_id=response.request_id,
                                    latency_ms=response.latency_ms, text=response.text,
                                    backend=response.backend))
        speech_text = format_for_speech(response.text)
        self._announce(speech_text, Priority.DESCRIPTION, now, effects)
        record = LatencyRecorded(at=now, path="detail",
                                 duration_ms=now - self._describe_pressed_at)
        self.telemetry.add(record)
        effects.append(record)
        self._set_mode(Mode.CORE, now, effects)

    def _handle_description_failed(self, request_id: str, now: int,
                                   effects: list[Effect]) -> None:
        if request_id != self._pending_request_id:
            effects.append(Warning(at=now, text=f"stale description failure {request_id} dropped"))
            return
        self._pending_request_id = None
        self._announce(PROMPT_DESCRIPTION_DOWN, Priority.DESCRIPTION, now, effects)
        self._set_mode(Mode.CORE, now, effects)
