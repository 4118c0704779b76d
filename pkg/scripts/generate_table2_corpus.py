#!/usr/bin/env python3
"""Regenerate scenarios/table2_corpus.json.

The corpus is sized so that aggregating frame scores by lighting yields the
confusion matrices (tp=22, fp=3, fn=2, tn=23) for good lighting and
(tp=57, fp=18, fn=20, tn=95) for low light. Frames carry unique labels per
frame (no NMS interaction) on a 3x3 grid of disjoint boxes; false negatives
come from dropped or low-confidence fixture emissions, false positives from
spurious fixture emissions, true negatives from blank negative-probe frames.
"""

import json
from pathlib import Path

LABELS = ["bottle", "cup", "chair", "book", "phone", "bowl", "lamp", "shoe", "bag"]
OUT = Path(__file__).resolve().parent.parent / "scenarios" / "table2_corpus.json"


def grid_box(cell: int) -> list[float]:
    row, col = divmod(cell, 3)
    x0 = round(0.04 + col * 0.32, 4)
    y0 = round(0.04 + row * 0.32, 4)
    return [x0, y0, round(x0 + 0.26, 4), round(y0 + 0.26, 4)]


def make_frame(lighting: str, n_objects: int, n_missed: int, n_spurious: int,
               miss_via_drop: bool = False) -> dict:
    annotations = []
    for i in range(n_objects):
        ann = {"kind": "object", "label": LABELS[i], "box": grid_box(i)}
        if i < n_missed:
            ann["detect"] = {"drop": True} if miss_via_drop else {"confidence": 0.3}
        annotations.append(ann)
    spec = {
        "width": 96, "height": 96,
        "color": [200, 200, 200] if lighting == "good" else [40, 40, 40],
        "lighting": lighting,
        "annotations": annotations,
    }
    if n_spurious:
        spec["spurious"] = [
            {"label": f"ghost_{chr(ord('a') + j)}", "box": grid_box(8 - j), "confidence": 0.8}
            for j in range(n_spurious)]
    return spec


def main() -> None:
    assets = {
        # good lighting: tp 6+5+6+5=22, fn 1+1=2, fp 2+1=3
        "g1": make_frame("good", 6, 0, 0),
        "g2": make_frame("good", 6, 1, 0),
        "g3": make_frame("good", 6, 0, 2),
        "g4": make_frame("good", 6, 1, 1, miss_via_drop=True),
        "blank_good": {"width": 96, "height": 96, "color": [200, 200, 200],
                       "lighting": "good", "annotations": []},
        "blank_low": {"width": 96, "height": 96, "color": [40, 40, 40],
                      "lighting": "low", "annotations": []},
    }
    # low light: 11 frames x 7 objects = 77 ground truths; 57 detected (20
    # missed, 2 per frame on the first 10); 18 spurious (2 on the first 9)
    for i in range(11):
        missed = 2 if i < 10 else 0
        spurious = 2 if i < 9 else 0
        assets[f"l{i + 1}"] = make_frame("low", 7, missed, spurious,
                                         miss_via_drop=(i % 2 == 0))

    timeline = []
    at = 100
    for frame_id in ["g1", "g2", "g3", "g4"] + [f"l{i + 1}" for i in range(11)]:
        timeline.append({"at": at, "event": "frame", "frame_id": frame_id})
        at += 10
    for _ in range(23):
        timeline.append({"at": at, "event": "negative_probe", "frame_id": "blank_good"})
        at += 10
    for _ in range(95):
        timeline.append({"at": at, "event": "negative_probe", "frame_id": "blank_low"})
        at += 10

    doc = {
        "name": "table2-corpus",
        "assets": assets,
        "timeline": timeline,
        "llm": {"latency_ms": 0},
        "expectations": [],
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {OUT} ({len(timeline)} timeline events)")


if __name__ == "__main__":
    main()
