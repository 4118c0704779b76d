from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from visionassist.perception import (
    BoundingBox,
    Detection,
    FaceEmbedding,
    Frame,
    GroundTruthItem,
    Lighting,
)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

SHIPPED_SCENARIOS = sorted(SCENARIO_DIR.glob("*.json"))


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


def random_box(rng: np.random.Generator) -> BoundingBox:
    x0, x1 = sorted(rng.uniform(0.0, 1.0, 2))
    y0, y1 = sorted(rng.uniform(0.0, 1.0, 2))
    if x1 - x0 < 1e-3:
        x1 = min(1.0, x0 + 1e-3)
    if y1 - y0 < 1e-3:
        y1 = min(1.0, y0 + 1e-3)
    return BoundingBox(x0, y0, x1, y1)


def random_detections(rng: np.random.Generator, n: int,
                      labels=("cup", "chair", "person")) -> list[Detection]:
    return [Detection(box=random_box(rng), label=str(rng.choice(labels)),
                      confidence=float(rng.uniform(0.0, 1.0))) for _ in range(n)]


def unit_vector(rng: np.random.Generator, dim: int = 128) -> np.ndarray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def embedding_at_similarity(base: FaceEmbedding, target: float,
                            rng: np.random.Generator) -> FaceEmbedding:
    """Unit vector with an exact cosine similarity to `base` (up to fp error)."""
    w = rng.standard_normal(128)
    w -= np.dot(w, base.vector) * base.vector
    w /= np.linalg.norm(w)
    q = target * base.vector + np.sqrt(1.0 - target * target) * w
    return FaceEmbedding(vector=q)


def make_frame(frame_id: str = "f", width: int = 60, height: int = 40,
               color: tuple[int, int, int] = (128, 128, 128), timestamp: int = 0,
               lighting: Lighting = Lighting.GOOD,
               annotations: list[GroundTruthItem] | None = None,
               is_probe: bool = False) -> Frame:
    return Frame(id=frame_id, width=width, height=height,
                 pixels=bytes(color) * (width * height), timestamp=timestamp,
                 lighting=lighting, annotations=annotations or [], is_probe=is_probe)


def scenario_from_dict(doc: dict):
    from visionassist.simulator import load_scenario
    return load_scenario(json.dumps(doc))
