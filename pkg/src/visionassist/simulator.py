"""Scenario files, the virtual-clock runner, and deterministic traces.

A scenario is a JSON document with top-level keys `name`, `assets`,
`timeline`, `llm`, `expectations`. Times are integer milliseconds on the
virtual clock. Frames are either constant-color specs or base64 raw RGB so
the corpus needs no binary assets. Running a scenario is a pure function of
its bytes: traces from repeated runs are byte-identical.
"""

from __future__ import annotations

import base64
import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Optional

from .backends import (
    FixtureDetectorBackend,
    FixtureEmbedderBackend,
    FixtureFaceDetectorBackend,
    SpuriousDetection,
)
from .context_llm import (
    DEFAULT_TIMEOUT_MS,
    DescriptionRequest,
    LVLMClient,
    MockLVLMClient,
    RequestOrigin,
    describe,
)
from .errors import (
    DescriptionTimeoutError,
    DescriptionTransportError,
    InvalidInputError,
    PrivacyViolationError,
    ScenarioFormatError,
)
from .metrics import ConfusionMatrix, score_frame
from .orchestrator import (
    ButtonPressed,
    DescriptionCompleted,
    DescriptionFailed,
    DetectionsEffect,
    DispatchDescription,
    DistanceArrived,
    Effect,
    EnrollmentRecorded,
    FrameArrived,
    InputEvent,
    LabelProvided,
    LatencyRecorded,
    LlmCompleted,
    LlmDispatched,
    BuzzerEffect,
    ModeChanged,
    Orchestrator,
    SpeechStarted,
    Warning,
)
from .perception import (
    BoundingBox,
    DetectorFault,
    Frame,
    GroundTruthItem,
    Lighting,
)
from .proximity import DistanceReading
from .recognition_db import RecognitionDatabase

DRAIN_WINDOW_MS = 2_000


# -- scenario model ------------------------------------------------------------


@dataclass
class AssetSpec:
    asset_id: str
    width: int
    height: int
    color: Optional[tuple[int, int, int]]
    pixels: Optional[bytes]
    lighting: Lighting
    annotations: list[GroundTruthItem]
    spurious: list[SpuriousDetection]

    def build_frame(self, timestamp: int, is_probe: bool = False) -> Frame:
        if self.pixels is not None:
            data = self.pixels
        else:
            data = bytes(self.color) * (self.width * self.height)
        return Frame(id=self.asset_id, width=self.width, height=self.height,
                     pixels=data, timestamp=timestamp, lighting=self.lighting,
                     annotations=list(self.annotations), is_probe=is_probe)


@dataclass(frozen=True)
class TimelineEvent:
    at: int
    kind: str  # frame | distance | button | label | negative_probe
    payload: dict


@dataclass(frozen=True)
class Expectation:
    by: int
    pattern: str


@dataclass
class LlmConfig:
    latency_ms: int = 0
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    responses: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class Scenario:
    name: str
    assets: dict[str, AssetSpec]
    timeline: list[TimelineEvent]
    llm: LlmConfig
    expectations: list[Expectation]

    def last_timeline_at(self) -> int:
        return self.timeline[-1].at if self.timeline else 0


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ScenarioFormatError(f"{path}: {message}")


def _parse_box(value: Any, path: str) -> BoundingBox:
    _require(isinstance(value, list) and len(value) == 4
             and all(isinstance(v, (int, float)) for v in value),
             path, "box must be [x_min, y_min, x_max, y_max]")
    try:
        return BoundingBox(*[float(v) for v in value])
    except InvalidInputError as exc:
        raise ScenarioFormatError(f"{path}: {exc}") from exc


def parse_asset_spec(asset_id: str, spec: Any) -> AssetSpec:
    path = f"assets[{asset_id!r}]"
    _require(isinstance(spec, dict), path, "asset must be an object")
    width, height = spec.get("width"), spec.get("height")
    _require(isinstance(width, int) and width > 0, f"{path}.width", "positive integer required")
    _require(isinstance(height, int) and height > 0, f"{path}.height", "positive integer required")
    color = spec.get("color")
    pixels_b64 = spec.get("pixels_b64")
    _require((color is None) != (pixels_b64 is None), path,
             "exactly one of color or pixels_b64 required")
    pixels = None
    if color is not None:
        _require(isinstance(color, list) and len(color) == 3
                 and all(isinstance(c, int) and 0 <= c <= 255 for c in color),
                 f"{path}.color", "must be [r, g, b] bytes")
        color = tuple(color)
    else:
        try:
            pixels = base64.b64decode(pixels_b64, validate=True)
        except Exception as exc:
            raise ScenarioFormatError(f"{path}.pixels_b64: invalid base64 ({exc})") from exc
        _require(len(pixels) == width * height * 3, f"{path}.pixels_b64",
                 f"decoded length {len(pixels)} != {width * height * 3}")
    lighting_raw = spec.get("lighting", "unspecified")
    _require(lighting_raw in ("good", "low", "unspecified"), f"{path}.lighting",
             "must be good|low|unspecified")
    annotations = []
    for i, ann in enumerate(spec.get("annotations", [])):
        apath = f"{path}.annotations[{i}]"
        _require(isinstance(ann, dict), apath, "annotation must be an object")
        _require(ann.get("kind") in ("object", "face"), f"{apath}.kind", "must be object|face")
        label = ann.get("label")
        _require(isinstance(label, str) and bool(label), f"{apath}.label", "non-empty string required")
        box = _parse_box(ann.get("box"), f"{apath}.box")
        face_id = ann.get("face_id")
        _require(face_id is None or (isinstance(face_id, str) and face_id),
                 f"{apath}.face_id", "must be a non-empty string when present")
        fault = None
        if "detect" in ann:
            d = ann["detect"]
            _require(isinstance(d, dict), f"{apath}.detect", "must be an object")
            fault = DetectorFault(
                confidence=d.get("confidence"),
                as_label=d.get("as_label"),
                drop=bool(d.get("drop", False)),
                duplicate_confidence=d.get("duplicate_confidence"))
        annotations.append(GroundTruthItem(kind=ann["kind"], label=label, box=box,
                                           face_id=face_id, detector=fault))
    spurious = []
    for i, sp in enumerate(spec.get("spurious", [])):
        spath = f"{path}.spurious[{i}]"
        _require(isinstance(sp, dict), spath, "spurious item must be an object")
        label = sp.get("label")
        _require(isinstance(label, str) and bool(label), f"{spath}.label", "non-empty string required")
        conf = sp.get("confidence", 0.9)
        _require(isinstance(conf, (int, float)) and 0 <= conf <= 1, f"{spath}.confidence",
                 "must be within [0, 1]")
        spurious.append(SpuriousDetection(label=label,
                                          box=_parse_box(sp.get("box"), f"{spath}.box"),
                                          confidence=float(conf)))
    return AssetSpec(asset_id=asset_id, width=width, height=height,
                     color=color, pixels=pixels, lighting=Lighting(lighting_raw),
                     annotations=annotations, spurious=spurious)


def load_scenario(data: bytes | str) -> Scenario:
    """Parse and validate scenario bytes; raises ScenarioFormatError with the
    offending path (or line/column for JSON syntax errors)."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioFormatError(f"scenario is not UTF-8: {exc}") from exc
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"scenario is not valid JSON at line {exc.lineno} col {exc.colno}") from exc
    _require(isinstance(doc, dict), "$", "scenario root must be an object")
    name = doc.get("name")
    _require(isinstance(name, str) and bool(name), "name", "non-empty string required")

    assets_raw = doc.get("assets", {})
    _require(isinstance(assets_raw, dict), "assets", "must be an object")
    assets = {aid: parse_asset_spec(aid, spec) for aid, spec in assets_raw.items()}

    timeline_raw = doc.get("timeline", [])
    _require(isinstance(timeline_raw, list), "timeline", "must be an array")
    timeline: list[TimelineEvent] = []
    previous_at = None
    for i, ev in enumerate(timeline_raw):
        path = f"timeline[{i}]"
        _require(isinstance(ev, dict), path, "event must be an object")
        at = ev.get("at")
        _require(isinstance(at, int) and at >= 0, f"{path}.at",
                 "must be a non-negative integer (virtual ms)")
        _require(previous_at is None or at >= previous_at, f"{path}.at",
                 f"timeline out of order ({at} after {previous_at})")
        previous_at = at
        kind = ev.get("event")
        payload: dict = {}
        if kind in ("frame", "negative_probe"):
            frame_id = ev.get("frame_id")
            _require(isinstance(frame_id, str) and frame_id in assets, f"{path}.frame_id",
                     f"unknown frame_id {frame_id!r}")
            payload["frame_id"] = frame_id
        elif kind == "distance":
            meters, echo = ev.get("meters"), ev.get("echo_s")
            _require((meters is None) != (echo is None), path,
                     "exactly one of meters or echo_s required")
            value = meters if meters is not None else echo
            _require(isinstance(value, (int, float)) and value >= 0, path,
                     "distance value must be >= 0")
            payload["meters"], payload["echo_s"] = meters, echo
        elif kind == "button":
            _require(ev.get("button") in ("green", "blue"), f"{path}.button",
                     "must be green|blue")
            payload["button"] = ev["button"]
        elif kind == "label":
            text = ev.get("text")
            _require(isinstance(text, str), f"{path}.text", "string required")
            source = ev.get("source", "text")
            _require(source in ("voice", "text"), f"{path}.source", "must be voice|text")
            payload["text"], payload["source"] = text, source
        else:
            raise ScenarioFormatError(
                f"{path}.event: unknown kind {kind!r} "
                "(expected frame|distance|button|label|negative_probe)")
        timeline.append(TimelineEvent(at=at, kind=kind, payload=payload))

    llm_raw = doc.get("llm", {})
    _require(isinstance(llm_raw, dict), "llm", "must be an object")
    latency = llm_raw.get("latency_ms", 0)
    _require(isinstance(latency, int) and latency >= 0, "llm.latency_ms",
             "must be a non-negative integer")
    timeout = llm_raw.get("timeout_ms", DEFAULT_TIMEOUT_MS)
    _require(isinstance(timeout, int) and timeout > 0, "llm.timeout_ms",
             "must be a positive integer")
    responses = []
    for i, resp in enumerate(llm_raw.get("responses", [])):
        rpath = f"llm.responses[{i}]"
        _require(isinstance(resp, dict) and isinstance(resp.get("contains"), str)
                 and isinstance(resp.get("text"), str), rpath,
                 "must be an object with string keys contains, text")
        responses.append((resp["contains"], resp["text"]))

    expectations = []
    for i, exp in enumerate(doc.get("expectations", [])):
        epath = f"expectations[{i}]"
        _require(isinstance(exp, dict), epath, "must be an object")
        by = exp.get("by")
        _require(isinstance(by, int) and by >= 0, f"{epath}.by", "non-negative integer required")
        pattern = exp.get("pattern")
        _require(isinstance(pattern, str) and bool(pattern), f"{epath}.pattern",
                 "non-empty string required")
        expectations.append(Expectation(by=by, pattern=pattern))

    return Scenario(name=name, assets=assets, timeline=timeline,
                    llm=LlmConfig(latency_ms=latency, timeout_ms=timeout, responses=responses),
                    expectations=expectations)


def load_scenario_file(path) -> Scenario:
    with open(path, "rb") as fh:
        return load_scenario(fh.read())


# -- assembled system ----------------------------------------------------------


@dataclass
class System:
    orchestrator: Orchestrator
    llm_client: LVLMClient
    llm_timeout_ms: int
    db: RecognitionDatabase


def build_system(scenario: Scenario, db: Optional[RecognitionDatabase] = None,
                 llm_client: Optional[LVLMClient] = None) -> System:
    """Wire fixture backends and the mock LVLM client for a scenario run."""
    spurious = {aid: spec.spurious for aid, spec in scenario.assets.items() if spec.spurious}
    detector = FixtureDetectorBackend(spurious_by_frame=spurious)
    db = db if db is not None else RecognitionDatabase()
    client = llm_client if llm_client is not None else MockLVLMClient(
        latency_ms=scenario.llm.latency_ms, overrides=list(scenario.llm.responses))
    orch = Orchestrator(detector=detector,
                        face_detector=FixtureFaceDetectorBackend(),
                        embedder=FixtureEmbedderBackend(),
                        db=db, llm_timeout_ms=scenario.llm.timeout_ms)
    return System(orchestrator=orch, llm_client=client,
                  llm_timeout_ms=scenario.llm.timeout_ms, db=db)


# -- trace ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExpectationResult:
    expectation: Expectation
    passed: bool
    matched_at: Optional[int]


@dataclass
class Trace:
    scenario_name: str
    records: list[tuple[int, str, dict]] = field(default_factory=list)
    frame_scores: list[tuple[str, ConfusionMatrix]] = field(default_factory=list)
    latency_records: list[LatencyRecorded] = field(default_factory=list)
    llm_ledger: list = field(default_factory=list)
    expectation_results: list[ExpectationResult] = field(default_factory=list)

    def add(self, at: int, kind: str, payload: dict) -> None:
        self.records.append((at, kind, payload))

    def announcements(self) -> list[tuple[int, str, int]]:
        """(at, text, priority) for every spoken announcement, spoken order."""
        return [(at, p["text"], p["priority"]) for at, kind, p in self.records
                if kind == "announcement"]

    def buzzer_beeps(self) -> list[int]:
        return [at for at, kind, p in self.records if kind == "buzzer" and p["beep"]]

    def mode_transitions(self) -> list[tuple[int, str, str]]:
        return [(at, p["previous"], p["mode"]) for at, kind, p in self.records
                if kind == "mode"]

    def all_expectations_pass(self) -> bool:
        return all(r.passed for r in self.expectation_results)

    def render(self) -> str:
        """Canonical text form; byte-compared for the determinism contract."""
        lines = [f"trace {self.scenario_name}"]
        for at, kind, payload in self.records:
            lines.append(f"{at:>9} {kind} {json.dumps(payload, sort_keys=True)}")
        for condition, matrix in self.frame_scores:
            lines.append(f"score {condition} tp={matrix.tp} fp={matrix.fp} "
                         f"fn={matrix.fn} tn={matrix.tn}")
        for rec in self.llm_ledger:
            lines.append(f"llm_dispatch {rec.request_id} image={rec.image_attached}")
        for res in self.expectation_results:
            status = "pass" if res.passed else "fail"
            lines.append(f"expectation {status} by={res.expectation.by} "
                         f"pattern={res.expectation.pattern!r}")
        return "\n".join(lines) + "\n"


# -- runner ----------------------------------------------------------------------


def effect_wire_entry(effect: Effect) -> Optional[tuple[str, dict]]:
    """(event kind, payload) for an effect, shared by traces and the gateway
    broadcast; None for runner-internal effects."""
    if isinstance(effect, SpeechStarted):
        ann = effect.announcement
        return "announcement", {"text": ann.text, "priority": int(ann.priority),
                                "priority_name": ann.priority.name.lower(),
                                "created_at": ann.created_at}
    if isinstance(effect, BuzzerEffect):
        return "buzzer", {"beep": effect.beep, "state": effect.state,
                          "meters": round(effect.meters, 6)}
    if isinstance(effect, ModeChanged):
        return "mode", {"previous": effect.previous.value, "mode": effect.mode.value}
    if isinstance(effect, DetectionsEffect):
        return "detection", {
            "frame_id": effect.frame.id,
            "items": [{"label": d.label, "confidence": round(d.confidence, 6),
                       "box": [round(v, 6) for v in d.box.as_list()]}
                      for d in effect.detections]}
    if isinstance(effect, EnrollmentRecorded):
        return "enrollment", {"label": effect.label, "source": effect.source,
                              "kind": effect.kind}
    if isinstance(effect, LatencyRecorded):
        return "latency", {"path": effect.path, "ms": effect.duration_ms}
    if isinstance(effect, LlmDispatched):
        return "llm_request", {"request_id": effect.request_id,
                               "image_attached": effect.image_attached}
    if isinstance(effect, LlmCompleted):
        return "llm_response", {"request_id": effect.request_id,
                                "latency_ms": effect.latency_ms, "text": effect.text,
                                "backend": effect.backend}
    if isinstance(effect, Warning):
        return "warning", {"text": effect.text}
    return None  # DispatchDescription is runner-internal


def run(scenario: Scenario, system: Optional[System] = None) -> Trace:
    """Drive the orchestrator through the scenario on the virtual clock.

    Scheduled completions (LVLM) merge with the timeline in time order;
    nothing past the drain horizon (last timeline event + 2 s) is processed.
    """
    if system is None:
        system = build_system(scenario)
    orch = system.orchestrator
    trace = Trace(scenario_name=scenario.name)
    horizon = scenario.last_timeline_at() + DRAIN_WINDOW_MS

    scheduled: list[tuple[int, int, InputEvent]] = []
    sched_seq = len(scenario.timeline)

    def record_effects(effects: list[Effect]) -> None:
        nonlocal sched_seq
        for effect in effects:
            if isinstance(effect, DispatchDescription):
                sched_seq += 1
                completion = _perform_description(system, effect.request, effect.at)
                if completion.at <= horizon:
                    heapq.heappush(scheduled, (completion.at, sched_seq, completion))
                continue
            if isinstance(effect, DetectionsEffect):
                frame = effect.frame
                truths = [a for a in frame.annotations if a.kind == "object"]
                matrix = score_frame(list(effect.detections), truths,
                                     negative_probe=frame.is_probe)
                trace.frame_scores.append((frame.lighting.value, matrix))
            if isinstance(effect, LatencyRecorded):
                trace.latency_records.append(effect)
            entry = effect_wire_entry(effect)
            if entry is not None:
                trace.add(effect.at, entry[0], entry[1])

    timeline_idx = 0
    while True:
        next_timeline = scenario.timeline[timeline_idx] if timeline_idx < len(scenario.timeline) else None
        next_sched = scheduled[0] if scheduled else None
        if next_timeline is None and next_sched is None:
            break
        take_timeline = (next_sched is None
                         or (next_timeline is not None and next_timeline.at <= next_sched[0]))
        if take_timeline:
            event = timeline_to_event(scenario, next_timeline)
            timeline_idx += 1
        else:
            event = heapq.heappop(scheduled)[2]
        if event.at > horizon:
            continue
        record_effects(orch.handle_event(event))

    record_effects(orch.advance_to(horizon))

    trace.llm_ledger = list(getattr(system.llm_client, "ledger", []))
    announcements = trace.announcements()
    for exp in scenario.expectations:
        matched_at = next((at for at, text, _p in announcements
                           if at <= exp.by and exp.pattern in text), None)
        trace.expectation_results.append(ExpectationResult(
            expectation=exp, passed=matched_at is not None, matched_at=matched_at))
    return trace


def timeline_to_event(scenario: Scenario, ev: TimelineEvent) -> InputEvent:
    if ev.kind in ("frame", "negative_probe"):
        asset = scenario.assets[ev.payload["frame_id"]]
        frame = asset.build_frame(timestamp=ev.at, is_probe=ev.kind == "negative_probe")
        return FrameArrived(at=ev.at, frame=frame)
    if ev.kind == "distance":
        reading = DistanceReading(timestamp=ev.at, meters=ev.payload["meters"],
                                  echo_round_trip_s=ev.payload["echo_s"])
        return DistanceArrived(at=ev.at, reading=reading)
    if ev.kind == "button":
        return ButtonPressed(at=ev.at, button=ev.payload["button"])
    return LabelProvided(at=ev.at, text=ev.payload["text"], source=ev.payload["source"])


def _perform_description(system: System, request: DescriptionRequest,
                         dispatched_at: int) -> InputEvent:
    """Run the LVLM call and return the completion event to feed back."""
    try:
        response = describe(system.llm_client, request, RequestOrigin.BLUE_BUTTON,
                            timeout_ms=system.llm_timeout_ms)
    except DescriptionTimeoutError:
        return DescriptionFailed(at=dispatched_at + system.llm_timeout_ms,
                                 request_id=request.request_id, reason="timeout")
    except (DescriptionTransportError, PrivacyViolationError) as exc:
        return DescriptionFailed(at=dispatched_at, request_id=request.request_id,
                                 reason=str(exc))
    return DescriptionCompleted(at=dispatched_at + response.latency_ms, response=response)
