"""Scene-context assembly, LVLM prompting, and speech formatting.

The mock client is the default backend and the only one used in tests; a
remote adapter activates only when ASSIST_LLM_ENDPOINT is configured. Images
leave the device solely on blue-button-initiated requests (data minimization);
describe() enforces that gate before anything is dispatched.
"""

from __future__ import annotations

import json
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, runtime_checkable

from .errors import (
    DescriptionTimeoutError,
    DescriptionTransportError,
    PrivacyViolationError,
)
from .perception import BoundingBox, Detection, Frame
from .recognition_db import MatchResult

PROMPT_PREAMBLE = "You are assisting a blind user; describe the scene concisely for speech."
DEFAULT_TIMEOUT_MS = 10_000
SPEECH_MAX_CHARS = 600
SPEECH_SENTENCE_SPLIT = 200
TRUNCATION_MARK = "…details truncated"

ENDPOINT_ENV = "ASSIST_LLM_ENDPOINT"
API_KEY_ENV = "ASSIST_LLM_API_KEY"


class RequestOrigin(str, Enum):
    BLUE_BUTTON = "blue_button"
    CORE = "core"


@dataclass(frozen=True)
class SceneContext:
    detections: tuple[tuple[str, BoundingBox], ...]
    face_matches: tuple[MatchResult, ...]
    distance_m: Optional[float]
    captured_at: int
    image_attached: bool


@dataclass(frozen=True)
class DescriptionRequest:
    context: SceneContext
    image: Optional[Frame]
    request_id: str

    def __post_init__(self):
        if self.image is not None and not self.context.image_attached:
            raise PrivacyViolationError(
                f"request {self.request_id}: image present but context not flagged image_attached")


@dataclass(frozen=True)
class DescriptionResponse:
    request_id: str
    text: str
    latency_ms: int
    backend: str  # "mock" | "remote"


@dataclass(frozen=True)
class DispatchRecord:
    """Mock-client ledger entry; the privacy invariant is asserted on these."""

    request_id: str
    image_attached: bool
    prompt: str


@runtime_checkable
class LVLMClient(Protocol):
    name: str

    def complete(self, request: DescriptionRequest, prompt: str) -> tuple[str, int]:
        """Return (text, latency_ms). Must record the dispatch if it keeps a ledger."""
        ...


def spatial_phrase(box: BoundingBox) -> str:
    """Horizontal thirds by box center, plus 'close' for area > 0.15."""
    cx = box.center_x()
    if cx < 1.0 / 3.0:
        phrase = "on your left"
    elif cx <= 2.0 / 3.0:
        phrase = "ahead"
    else:
        phrase = "on your right"
    if box.area > 0.15:
        phrase += ", close"
    return phrase


def build_context(detections: list[Detection], face_matches: list[MatchResult],
                  distance_m: Optional[float], now: int,
                  image_attached: bool) -> SceneContext:
    """Assemble the scene digest; detections sorted by confidence descending."""
    ordered = sorted(detections, key=lambda d: -d.confidence)
    return SceneContext(
        detections=tuple((d.label, d.box) for d in ordered),
        face_matches=tuple(face_matches),
        distance_m=distance_m,
        captured_at=now,
        image_attached=image_attached,
    )


def compose_prompt(context: SceneContext) -> str:
    """Deterministic prompt: preamble, one line per item. Equal contexts give
    byte-equal prompts."""
    lines = [PROMPT_PREAMBLE]
    for label, box in context.detections:
        lines.append(f"{label}, {spatial_phrase(box)}")
    for match in context.face_matches:
        if match.matched:
            lines.append(f"known person: {match.label}")
    if context.distance_m is not None:
        lines.append(f"nearest obstacle: {context.distance_m:.2f} m")
    if len(lines) == 1:
        lines.append("no recognized items")
    return "\n".join(lines)


def describe(client: LVLMClient, request: DescriptionRequest,
             origin: RequestOrigin,
             timeout_ms: int = DEFAULT_TIMEOUT_MS) -> DescriptionResponse:
    """Run one description request through a client.

    Image-bearing requests must assert blue-button origin; violations raise
    before anything reaches the client. Latency above timeout_ms raises
    DescriptionTimeoutError (virtual timeout for the mock client).
    """
    if request.image is not None and origin != RequestOrigin.BLUE_BUTTON:
        raise PrivacyViolationError(
            f"request {request.request_id}: image payload from non-blue-button origin "
            f"{origin.value!r}; not dispatched")
    prompt = compose_prompt(request.context)
    text, latency_ms = client.complete(request, prompt)
    if latency_ms > timeout_ms:
        raise DescriptionTimeoutError(
            f"request {request.request_id}: backend latency {latency_ms} ms "
            f"exceeds timeout {timeout_ms} ms")
    return DescriptionResponse(request_id=request.request_id, text=text,
                               latency_ms=latency_ms, backend=client.name)


@dataclass
class MockLVLMClient:
    """Deterministic offline client.

    latency_ms is virtual latency reported to the caller. `overrides` maps a
    prompt substring to a canned response; first match wins.
    """

    latency_ms: int = 0
    overrides: list[tuple[str, str]] = field(default_factory=list)
    ledger: list[DispatchRecord] = field(default_factory=list)
    name: str = "mock"

    def complete(self, request: DescriptionRequest, prompt: str) -> tuple[str, int]:
        self.ledger.append(DispatchRecord(
            request_id=request.request_id,
            image_attached=request.image is not None,
            prompt=prompt))
        for needle, canned in self.overrides:
            if needle in prompt:
                return canned, self.latency_ms
        return self._render(request.context), self.latency_ms

    def _render(self, context: SceneContext) -> str:
        parts = [f"{label} {spatial_phrase(box)}" for label, box in context.detections]
        parts += [f"{m.label} who you know" for m in context.face_matches if m.matched]
        if context.distance_m is not None:
            parts.append(f"nearest obstacle {context.distance_m:.2f} m")
        if not parts:
            return "I can see: no recognized items"
        return "I can see: " + "; ".join(parts)

    def image_dispatch_count(self) -> int:
        return sum(1 for rec in self.ledger if rec.image_attached)


@dataclass
class RemoteLVLMClient:
    """POSTs {prompt, image_b64?} as JSON to the configured endpoint.

    The endpoint should be HTTPS in real deployments; the key rides in an
    Authorization header. Timeout is enforced wall-clock.
    """

    endpoint: str
    api_key: str = ""
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    name: str = "remote"

    def complete(self, request: DescriptionRequest, prompt: str) -> tuple[str, int]:
        import base64

        payload: dict = {"prompt": prompt}
        if request.image is not None:
            payload["image_b64"] = base64.b64encode(request.image.pixels).decode("ascii")
            payload["width"] = request.image.width
            payload["height"] = request.image.height
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=body, method="POST",
            headers={"Content-Type": "application/json",
                     **({"Authorization": f"Bearer {self.api_key}"} if self.api_key else {})})
        start = time.monotonic()
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                doc = json.loads(resp.read().decode("utf-8"))
        except TimeoutError as exc:
            raise DescriptionTimeoutError(f"remote call timed out: {exc}") from exc
        except urllib.error.URLError as exc:
            if isinstance(getattr(exc, "reason", None), TimeoutError):
                raise DescriptionTimeoutError(f"remote call timed out: {exc.reason}") from exc
            raise DescriptionTransportError(f"remote call failed: {exc}") from exc
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise DescriptionTransportError(f"remote response unreadable: {exc}") from exc
        latency_ms = int((time.monotonic() - start) * 1000)
        text = doc.get("text") if isinstance(doc, dict) else None
        if not isinstance(text, str) or not text:
            raise DescriptionTransportError("remote response missing 'text'")
        return text, latency_ms


def client_from_env(environ=os.environ) -> tuple[LVLMClient, Optional[str]]:
    """Remote client when ASSIST_LLM_ENDPOINT is set, else mock.

    Returns (client, warning); warning explains a forced mock fallback.
    """
    endpoint = environ.get(ENDPOINT_ENV, "").strip()
    if endpoint:
        return RemoteLVLMClient(endpoint=endpoint,
                                api_key=environ.get(API_KEY_ENV, "")), None
    return MockLVLMClient(), f"{ENDPOINT_ENV} not set; using mock description backend"


_MARKUP_CHARS = re.compile(r"[*_`#~|>]")
_WS = re.compile(r"\s+")


def _split_long_sentence(sentence: str) -> list[str]:
    """Break a sentence over 200 chars at clause boundaries (commas, semicolons)."""
    if len(sentence) <= SPEECH_SENTENCE_SPLIT:
        return [sentence]
    clauses = re.split(r"(?<=[,;:]) ", sentence)
    parts: list[str] = []
    current = ""
    for clause in clauses:
        candidate = (current + " " + clause).strip() if current else clause
        if current and len(candidate) > SPEECH_SENTENCE_SPLIT:
            parts.append(current.rstrip(",;: "))
            current = clause
        else:
            current = candidate
    if current:
        parts.append(current.rstrip(",;: "))
    return parts


def format_for_speech(text: str) -> str:
    """Make model output speakable: strip markup, collapse whitespace, break
    very long sentences, cap at 600 chars with a truncation notice."""
    cleaned = _MARKUP_CHARS.sub("", text)
    cleaned = _WS.sub(" ", cleaned).strip()
    sentences = re.split(r"(?<=[.!?]) ", cleaned)
    pieces: list[str] = []
    for sentence in sentences:
        pieces.extend(_split_long_sentence(sentence))
    out = ". ".join(p.rstrip(". ") for p in pieces if p).strip()
    if out and cleaned.endswith((".", "!", "?")):
        out += "."
    if len(out) <= SPEECH_MAX_CHARS:
        return out
    budget = SPEECH_MAX_CHARS - len(TRUNCATION_MARK) - 1
    cut = out[:budget]
    space = cut.rfind(" ")
    if space > 0:
        cut = cut[:space]
    return cut.rstrip(",;: ") + " " + TRUNCATION_MARK
