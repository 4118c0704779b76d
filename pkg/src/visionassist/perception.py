"""Detection post-processing and the core perception domain types.

Boxes are axis-aligned with normalized [0, 1] image coordinates. Detector
input is always a 300x300 image with channel values mapped to [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import InvalidInputError

DETECTOR_INPUT_SIZE = 300
CONFIDENCE_THRESHOLD = 0.5
NMS_IOU_THRESHOLD = 0.5
EMBEDDING_DIM = 128


class Lighting(str, Enum):
    GOOD = "good"
    LOW = "low"
    UNSPECIFIED = "unspecified"


@dataclass(frozen=True)
class BoundingBox:
    """Normalized box; x_min < x_max and y_min < y_max, all within [0, 1]."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min < self.x_max <= 1.0
                and 0.0 <= self.y_min < self.y_max <= 1.0):
            raise InvalidInputError(
                f"invalid bounding box ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def center_x(self) -> float:
        return (self.x_min + self.x_max) / 2.0

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class DetectorFault:
    """Per-annotation fixture-detector behavior override (simulator plumbing).

    confidence overrides the emitted score, as_label mislabels the item,
    drop suppresses the emission entirely, duplicate_confidence emits a
    second copy of the same box at the given score.
    """

    confidence: Optional[float] = None
    as_label: Optional[str] = None
    drop: bool = False
    duplicate_confidence: Optional[float] = None


@dataclass(frozen=True)
class GroundTruthItem:
    kind: str  # "object" | "face"
    label: str
    box: BoundingBox
    face_id: Optional[str] = None  # simulated identity for embedding fixtures
    detector: Optional[DetectorFault] = None

    def __post_init__(self):
        if self.kind not in ("object", "face"):
            raise InvalidInputError(f"ground-truth kind must be object|face, got {self.kind!r}")
        if not self.label:
            raise InvalidInputError("ground-truth label must be non-empty")


@dataclass
class Frame:
    """Timestamped RGB image; pixels are row-major 8-bit, length w*h*3."""

    id: str
    width: int
    height: int
    pixels: bytes
    timestamp: int  # virtual-clock ms
    lighting: Lighting = Lighting.UNSPECIFIED
    annotations: list[GroundTruthItem] = field(default_factory=list)
    is_probe: bool = False  # set by the simulator for negative probes

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"frame {self.id!r}: non-positive dimensions")
        expected = self.width * self.height * 3
        if len(self.pixels) != expected:
            raise InvalidInputError(
                f"frame {self.id!r}: pixel length {len(self.pixels)} != {expected}")


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: str
    confidence: float

    def __post_init__(self):
        if not self.label:
            raise InvalidInputError("detection label must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise InvalidInputError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class FaceEmbedding:
    """128-d unit vector; construction normalizes and rejects near-zero input."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (EMBEDDING_DIM,):
            raise InvalidInputError(f"embedding must have {EMBEDDING_DIM} dims, got {v.shape}")
        norm = float(np.linalg.norm(v))
        if norm < 1e-12:
            raise InvalidInputError("embedding vector has (near-)zero norm")
        object.__setattr__(self, "vector", v / norm)

    def __eq__(self, other):
        return isinstance(other, FaceEmbedding) and np.array_equal(self.vector, other.vector)


@dataclass
class PreprocessedImage:
    """300x300x3 float values in [-1, 1], ready for the detector backend.

    source_frame is carried so fixture backends can read the originating
    frame's ground truth; real backends ignore it.
    """

    values: np.ndarray
    source_frame: Optional[Frame] = None

    def __post_init__(self):
        shape = (DETECTOR_INPUT_SIZE, DETECTOR_INPUT_SIZE, 3)
        if self.values.shape != shape:
            raise InvalidInputError(f"preprocessed image shape {self.values.shape} != {shape}")


def _resample_axis(arr: np.ndarray, axis: int, new_len: int) -> np.ndarray:
    """Linear resample along one axis using half-pixel-center sampling."""
    old_len = arr.shape[axis]
    # dst pixel centers mapped back into source coordinates
    src = (np.arange(new_len) + 0.5) * (old_len / new_len) - 0.5
    lo = np.clip(np.floor(src).astype(int), 0, old_len - 1)
    hi = np.clip(lo + 1, 0, old_len - 1)
    frac = np.clip(src - lo, 0.0, 1.0)
    arr = np.moveaxis(arr, axis, 0)
    out = arr[lo] * (1.0 - frac).reshape((-1,) + (1,) * (arr.ndim - 1)) \
        + arr[hi] * frac.reshape((-1,) + (1,) * (arr.ndim - 1))
    return np.moveaxis(out, 0, axis)


def preprocess(frame: Frame) -> PreprocessedImage:
    """Bilinear-resize a frame to 300x300 and map bytes to [-1, 1] (v/127.5 - 1)."""
    expected = frame.width * frame.height * 3
    if len(frame.pixels) != expected:
        raise InvalidInputError(
            f"frame {frame.id!r}: pixel length {len(frame.pixels)} != {expected}")
    raw = np.frombuffer(frame.pixels, dtype=np.uint8).reshape(
        frame.height, frame.width, 3).astype(np.float64)
    resized = _resample_axis(raw, 0, DETECTOR_INPUT_SIZE)
    resized = _resample_axis(resized, 1, DETECTOR_INPUT_SIZE)
    values = resized / 127.5 - 1.0
    return PreprocessedImage(values=np.clip(values, -1.0, 1.0), source_frame=frame)


def filter_by_confidence(detections: list[Detection],
                         threshold: float = CONFIDENCE_THRESHOLD) -> list[Detection]:
    """Keep detections strictly above the threshold, preserving order."""
    return [d for d in detections if d.confidence > threshold]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0.0 for disjoint boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def nms(detections: list[Detection],
        iou_threshold: float = NMS_IOU_THRESHOLD) -> list[Detection]:
    """Greedy per-label non-max suppression.

    Candidates are ranked by confidence descending with original list index
    breaking ties; a kept detection suppresses remaining detections of the
    same label whose IoU with it exceeds iou_threshold.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].confidence, i))
    kept: list[Detection] = []
    suppressed = [False] * len(detections)
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        top = detections[i]
        kept.append(top)
        for j in order[pos + 1:]:
            if suppressed[j]:
                continue
            other = detections[j]
            if other.label == top.label and iou(top.box, other.box) > iou_threshold:
                suppressed[j] = True
    return kept
