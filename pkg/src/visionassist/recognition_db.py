"""Personalized database of labeled embeddings: enrollment, cosine matching,
augmentation, and the canonical portable snapshot format.

Snapshot contract (bit-exact): a single-line JSON document, UTF-8, keys in
fixed order `version` then `records`; records sorted by label byte-wise; each
record has keys `label`, `source`, `created_at_ms`, `embeddings`; every
embedding component is rendered with exactly 9 significant digits in plain
decimal notation (never scientific). One trailing LF, no other whitespace.

Runtime persistence (when a path is given) is a SQLite file; the snapshot is
the only cross-implementation contract.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
from dataclasses import dataclass, field
from decimal import Context, Decimal, ROUND_HALF_EVEN
from typing import Optional

import numpy as np

from .errors import InvalidInputError, InvalidLabelError, SnapshotFormatError
from .perception import EMBEDDING_DIM, FaceEmbedding

SNAPSHOT_VERSION = 1
MATCH_THRESHOLD = 0.80
MAX_EMBEDDINGS_PER_LABEL = 5
AUGMENT_SIGMA = 0.05

_NINE_SIG = Context(prec=9, rounding=ROUND_HALF_EVEN)


@dataclass(frozen=True)
class MatchResult:
    label: Optional[str]
    similarity: float
    matched: bool


@dataclass
class _Entry:
    """One enrolled embedding plus its derived (augmented) variants."""

    vector: np.ndarray
    derived: list[np.ndarray] = field(default_factory=list)


@dataclass
class PersonRecord:
    label: str
    source: str  # "voice" | "text"
    created_at_ms: int
    entries: list[_Entry] = field(default_factory=list)

    @property
    def embeddings(self) -> list[np.ndarray]:
        """User-provided originals, enrollment order."""
        return [e.vector for e in self.entries]


def cosine_similarity(a: FaceEmbedding, b: FaceEmbedding) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1] against rounding."""
    if a.vector.shape != b.vector.shape:
        raise InvalidInputError(
            f"embedding dimension mismatch: {a.vector.shape} vs {b.vector.shape}")
    return float(np.clip(np.dot(a.vector, b.vector), -1.0, 1.0))


def augment(embedding: FaceEmbedding, n: int, seed: int) -> list[FaceEmbedding]:
    """n jittered unit-vector variants; Gaussian noise sigma=0.05 per component.

    Fully determined by (embedding, n, seed).
    """
    if n < 0:
        raise InvalidInputError("augment count must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        noisy = embedding.vector + rng.normal(0.0, AUGMENT_SIGMA, EMBEDDING_DIM)
        out.append(FaceEmbedding(vector=noisy))
    return out


def seed_for_label(label: str) -> int:
    return int.from_bytes(hashlib.sha256(("aug:" + label).encode("utf-8")).digest()[:8], "big")


def format_component(x: float) -> str:
    """Render a float with exactly 9 significant digits, plain decimal notation."""
    if x == 0.0:
        return "0.00000000"
    d = _NINE_SIG.create_decimal(Decimal(repr(x)))
    sign, digits, exp = d.as_tuple()
    digits = list(digits)
    while len(digits) < 9:
        digits.append(0)
        exp -= 1
    # value = 0.digits * 10^(exp + len(digits)); place the point accordingly
    point = len(digits) + exp
    if point <= 0:
        body = "0." + "0" * (-point) + "".join(map(str, digits))
    elif point >= len(digits):
        body = "".join(map(str, digits)) + "0" * (point - len(digits)) + ".0"
    else:
        body = "".join(map(str, digits[:point])) + "." + "".join(map(str, digits[point:]))
    return ("-" if sign else "") + body


class RecognitionDatabase:
    """Label -> embeddings store with cosine matching.

    At most 5 originals per label (oldest evicted first); derived variants
    ride along their original and participate in matching but never in export.
    """

    def __init__(self, path: Optional[str] = None,
                 match_threshold: float = MATCH_THRESHOLD):
        self.match_threshold = match_threshold
        self._records: dict[str, PersonRecord] = {}
        self._conn: Optional[sqlite3.Connection] = None
        if path is not None:
            self._conn = sqlite3.connect(path)
            self._init_store()
            self._load_store()

    # -- core operations -----------------------------------------------------

    def enroll(self, label: str, embedding: FaceEmbedding, source: str,
               now_ms: int, augment_n: int = 0,
               augment_seed: Optional[int] = None) -> PersonRecord:
        """Add an embedding under a label, creating the record if new.

        augment_n > 0 stores that many derived variants alongside the original.
        """
        label = label.strip()
        if not label:
            raise InvalidLabelError("enrollment label is empty")
        if source not in ("voice", "text"):
            raise InvalidInputError(f"enrollment source must be voice|text, got {source!r}")
        seed = seed_for_label(label) if augment_seed is None else augment_seed
        derived = [e.vector for e in augment(embedding, augment_n, seed)]
        record = self._records.get(label)
        if record is None:
            record = PersonRecord(label=label, source=source, created_at_ms=now_ms)
            self._records[label] = record
        record.entries.append(_Entry(vector=embedding.vector, derived=derived))
        while len(record.entries) > MAX_EMBEDDINGS_PER_LABEL:
            record.entries.pop(0)
        self._persist_record(record)
        return record

    def match(self, query: FaceEmbedding) -> MatchResult:
        """Exhaustive scan over all stored and derived embeddings.

        Returns the best label even below threshold; ties go to the
        lexicographically smallest label. Empty database -> similarity -1.
        """
        best_label: Optional[str] = None
        best_sim = -1.0
        for label in sorted(self._records):
            record = self._records[label]
            for entry in record.entries:
                for vec in [entry.vector] + entry.derived:
                    sim = float(np.clip(np.dot(query.vector, vec), -1.0, 1.0))
                    if sim > best_sim:
                        best_sim = sim
                        best_label = label
        if best_label is None:
            return MatchResult(label=None, similarity=-1.0, matched=False)
        return MatchResult(label=best_label, similarity=best_sim,
                           matched=best_sim >= self.match_threshold)

    def remove(self, label: str) -> bool:
        existed = label in self._records
        if existed:
            del self._records[label]
            if self._conn is not None:
                self._conn.execute("DELETE FROM records WHERE label = ?", (label,))
                self._conn.execute("DELETE FROM embeddings WHERE label = ?", (label,))
                self._conn.commit()
        return existed

    def list_labels(self) -> list[str]:
        return sorted(self._records)

    def __len__(self) -> int:
        return len(self._records)

    # -- canonical snapshot --------------------------------------------------

    def export_snapshot(self) -> bytes:
        parts = ['{"version":%d,"records":[' % SNAPSHOT_VERSION]
        labels = sorted(self._records, key=lambda s: s.encode("utf-8"))
        for i, label in enumerate(labels):
            rec = self._records[label]
            if i:
                parts.append(",")
            vectors = ",".join(
                "[" + ",".join(format_component(float(x)) for x in vec) + "]"
                for vec in rec.embeddings)
            parts.append('{"label":%s,"source":%s,"created_at_ms":%d,"embeddings":[%s]}'
                         % (json.dumps(rec.label, ensure_ascii=False),
                            json.dumps(rec.source), rec.created_at_ms, vectors))
        parts.append("]}\n")
        return "".join(parts).encode("utf-8")

    @classmethod
    def import_snapshot(cls, data: bytes,
                        path: Optional[str] = None,
                        match_threshold: float = MATCH_THRESHOLD) -> "RecognitionDatabase":
        try:
            doc = json.loads(data.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise SnapshotFormatError(f"snapshot is not UTF-8: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise SnapshotFormatError(
                f"snapshot is not valid JSON at line {exc.lineno} col {exc.colno}") from exc
        if not isinstance(doc, dict):
            raise SnapshotFormatError("snapshot root must be an object")
        if doc.get("version") != SNAPSHOT_VERSION:
            raise SnapshotFormatError(
                f"unsupported snapshot version {doc.get('version')!r} (expected {SNAPSHOT_VERSION})")
        records = doc.get("records")
        if not isinstance(records, list):
            raise SnapshotFormatError("'records' must be an array")

        db = cls(path=path, match_threshold=match_threshold)
        if db._records:
            # importing replaces any content loaded from the backing store
            for label in list(db._records):
                db.remove(label)
        prev_key: Optional[bytes] = None
        for i, rec in enumerate(records):
            where = f"records[{i}]"
            if not isinstance(rec, dict):
                raise SnapshotFormatError(f"{where}: record must be an object")
            if set(rec) != {"label", "source", "created_at_ms", "embeddings"}:
                raise SnapshotFormatError(f"{where}: unexpected key set {sorted(rec)}")
            label, source = rec["label"], rec["source"]
            created = rec["created_at_ms"]
            if not isinstance(label, str) or not label.strip():
                raise SnapshotFormatError(f"{where}.label: must be a non-empty string")
            if source not in ("voice", "text"):
                raise SnapshotFormatError(f"{where}.source: must be voice|text")
            if not isinstance(created, int) or created < 0:
                raise SnapshotFormatError(f"{where}.created_at_ms: must be a non-negative integer")
            key = label.encode("utf-8")
            if prev_key is not None and key <= prev_key:
                raise SnapshotFormatError(
                    f"{where}.label: records must be strictly sorted by label "
                    f"({label!r} after duplicate or larger label)")
            prev_key = key
            embs = rec["embeddings"]
            if not isinstance(embs, list) or not 1 <= len(embs) <= MAX_EMBEDDINGS_PER_LABEL:
                raise SnapshotFormatError(
                    f"{where}.embeddings: must be an array of 1..{MAX_EMBEDDINGS_PER_LABEL} vectors")
            record = PersonRecord(label=label, source=source, created_at_ms=created)
            for j, vec in enumerate(embs):
                vwhere = f"{where}.embeddings[{j}]"
                if (not isinstance(vec, list) or len(vec) != EMBEDDING_DIM
                        or not all(isinstance(x, (int, float)) for x in vec)):
                    raise SnapshotFormatError(f"{vwhere}: must be an array of {EMBEDDING_DIM} numbers")
                arr = np.asarray(vec, dtype=np.float64)
                norm = float(np.linalg.norm(arr))
                if abs(norm - 1.0) > 1e-6:
                    raise SnapshotFormatError(f"{vwhere}: norm {norm:.9f} is not 1 within 1e-6")
                record.entries.append(_Entry(vector=arr))
            db._records[label] = record
            db._persist_record(record)
        return db

    # -- sqlite backing ------------------------------------------------------

    def _init_store(self):
        self._conn.executescript(
            """
            CREATE TABLE IF NOT EXISTS records(
                label TEXT PRIMARY KEY,
                source TEXT NOT NULL,
                created_at_ms INTEGER NOT NULL);
            CREATE TABLE IF NOT EXISTS embeddings(
                label TEXT NOT NULL,
                entry_idx INTEGER NOT NULL,
                variant_idx INTEGER NOT NULL,  -- 0 = original, >0 = derived
                vector TEXT NOT NULL,
                PRIMARY KEY(label, entry_idx, variant_idx));
            """)
        self._conn.commit()

    def _load_store(self):
        for label, source, created in self._conn.execute(
                "SELECT label, source, created_at_ms FROM records ORDER BY label"):
            record = PersonRecord(label=label, source=source, created_at_ms=created)
            rows = self._conn.execute(
                "SELECT entry_idx, variant_idx, vector FROM embeddings "
                "WHERE label = ? ORDER BY entry_idx, variant_idx", (label,)).fetchall()
            entries: dict[int, _Entry] = {}
            for entry_idx, variant_idx, vector_json in rows:
                arr = np.asarray(json.loads(vector_json), dtype=np.float64)
                if variant_idx == 0:
                    entries[entry_idx] = _Entry(vector=arr)
                else:
                    entries[entry_idx].derived.append(arr)
            record.entries = [entries[k] for k in sorted(entries)]
            self._records[label] = record

    def _persist_record(self, record: PersonRecord):
        if self._conn is None:
            return
        self._conn.execute(
            "INSERT OR REPLACE INTO records(label, source, created_at_ms) VALUES (?,?,?)",
            (record.label, record.source, record.created_at_ms))
        self._conn.execute("DELETE FROM embeddings WHERE label = ?", (record.label,))
        for ei, entry in enumerate(record.entries):
            self._conn.execute(
                "INSERT INTO embeddings(label, entry_idx, variant_idx, vector) VALUES (?,?,?,?)",
                (record.label, ei, 0, json.dumps(entry.vector.tolist())))
            for vi, vec in enumerate(entry.derived, start=1):
                self._conn.execute(
                    "INSERT INTO embeddings(label, entry_idx, variant_idx, vector) VALUES (?,?,?,?)",
                    (record.label, ei, vi, json.dumps(vec.tolist())))
        self._conn.commit()

    def close(self):
        if self._conn is not None:
            self._conn.close()
            self._conn = None
