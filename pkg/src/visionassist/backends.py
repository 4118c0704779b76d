"""Model-backend interfaces plus the deterministic fixture implementations.

Fixture backends read the frame's ground-truth annotations instead of running
a neural network, so the full system is exercisable without model weights.
Real adapters only need to satisfy the three protocols below.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from .errors import DetectionBackendError, EmbeddingBackendError
from .perception import (
    BoundingBox,
    Detection,
    EMBEDDING_DIM,
    FaceEmbedding,
    Frame,
    PreprocessedImage,
    filter_by_confidence,
    iou,
    nms,
)

FIXTURE_DEFAULT_CONFIDENCE = 0.9


@runtime_checkable
class DetectorBackend(Protocol):
    def detect(self, image: PreprocessedImage) -> list[Detection]:
        """Return raw detections (pre-filter, pre-NMS)."""
        ...


@runtime_checkable
class FaceDetectorBackend(Protocol):
    def detect_faces(self, frame: Frame) -> list[BoundingBox]:
        ...


@runtime_checkable
class EmbedderBackend(Protocol):
    def embed(self, frame: Frame, box: BoundingBox) -> np.ndarray:
        """Return a 128-d vector; callers normalize, any norm is accepted."""
        ...


def _stable_seed(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def identity_embedding(identity: str) -> np.ndarray:
    """Seeded pseudo-random unit vector for a simulated identity, stable across runs."""
    rng = np.random.default_rng(_stable_seed("emb:" + identity))
    v = rng.standard_normal(EMBEDDING_DIM)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class SpuriousDetection:
    """A fixture-only false-positive emission (not ground truth)."""

    label: str
    box: BoundingBox
    confidence: float


@dataclass
class FixtureDetectorBackend:
    """Echoes the source frame's object ground truth, applying per-annotation
    DetectorFault overrides and per-frame spurious emissions.

    confidence_jitter adds deterministic noise seeded by frame id.
    """

    spurious_by_frame: dict[str, list[SpuriousDetection]] = field(default_factory=dict)
    default_confidence: float = FIXTURE_DEFAULT_CONFIDENCE
    confidence_jitter: float = 0.0
    fail_with: Optional[str] = None  # set to force a backend failure (tests)

    def detect(self, image: PreprocessedImage) -> list[Detection]:
        if self.fail_with is not None:
            raise RuntimeError(self.fail_with)
        frame = image.source_frame
        if frame is None:
            return []
        rng = np.random.default_rng(_stable_seed("det:" + frame.id))
        out: list[Detection] = []
        for ann in frame.annotations:
            if ann.kind != "object":
                continue
            fault = ann.detector
            if fault is not None and fault.drop:
                continue
            conf = self.default_confidence
            if fault is not None and fault.confidence is not None:
                conf = fault.confidence
            if self.confidence_jitter > 0.0:
                conf += float(rng.uniform(-self.confidence_jitter, self.confidence_jitter))
            conf = min(1.0, max(0.0, conf))
            label = ann.label
            if fault is not None and fault.as_label is not None:
                label = fault.as_label
            out.append(Detection(box=ann.box, label=label, confidence=conf))
            if fault is not None and fault.duplicate_confidence is not None:
                out.append(Detection(box=ann.box, label=label,
                                     confidence=fault.duplicate_confidence))
        for sp in self.spurious_by_frame.get(frame.id, []):
            out.append(Detection(box=sp.box, label=sp.label, confidence=sp.confidence))
        return out


@dataclass
class FixtureFaceDetectorBackend:
    fail_with: Optional[str] = None

    def detect_faces(self, frame: Frame) -> list[BoundingBox]:
        if self.fail_with is not None:
            raise RuntimeError(self.fail_with)
        return [ann.box for ann in frame.annotations if ann.kind == "face"]


@dataclass
class FixtureEmbedderBackend:
    """Deterministic embedding for the annotation best overlapping the query box.

    Identity key preference: the annotation's face_id, else its label. A box
    with no overlapping annotation falls back to a digest of the frame id and
    rounded box coordinates (still deterministic, just not cross-frame stable).
    """

    fail_with: Optional[str] = None

    def embed(self, frame: Frame, box: BoundingBox) -> np.ndarray:
        if self.fail_with is not None:
            raise RuntimeError(self.fail_with)
        best_key = None
        best_iou = 0.0
        for ann in frame.annotations:
            overlap = iou(ann.box, box)
            if overlap > best_iou:
                best_iou = overlap
                best_key = ann.face_id if ann.face_id else "label:" + ann.label
        if best_key is None:
            coords = ",".join(f"{v:.4f}" for v in box.as_list())
            best_key = f"anon:{frame.id}:{coords}"
        return identity_embedding(best_key)


def detect_objects(backend: DetectorBackend, image: PreprocessedImage) -> list[Detection]:
    """Backend inference followed by confidence filtering and NMS."""
    try:
        raw = backend.detect(image)
    except Exception as exc:
        raise DetectionBackendError(f"detector backend failed: {exc}") from exc
    return nms(filter_by_confidence(raw))


def detect_faces(backend: FaceDetectorBackend, frame: Frame) -> list[BoundingBox]:
    try:
        return list(backend.detect_faces(frame))
    except Exception as exc:
        raise DetectionBackendError(f"face detector backend failed: {exc}") from exc


def embed_face(backend: EmbedderBackend, frame: Frame, box: BoundingBox) -> FaceEmbedding:
    """Embed a crop and force unit norm regardless of backend output."""
    try:
        vec = backend.embed(frame, box)
    except Exception as exc:
        raise EmbeddingBackendError(f"embedder backend failed: {exc}") from exc
    return FaceEmbedding(vector=np.asarray(vec, dtype=np.float64))
