"""Student identity database: 128-D embeddings, nearest-neighbor matching,
and durable JSON persistence.

A record may hold several embeddings (enrollment from multiple frames);
its distance to a query is the minimum over them. Matching reads an
immutable snapshot of the records, so concurrent enrollments never leave a
half-applied state visible; mutations are serialized by a lock and swap in
a new snapshot atomically.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np

EMBEDDING_DIM = 128
GALLERY_VERSION = 1
DEFAULT_MATCH_THRESHOLD = 0.6
UNKNOWN = "unknown"


class GalleryError(Exception):
    """Base class for gallery failures."""


class GalleryFormatError(GalleryError):
    """Persisted gallery file is malformed; the message names the record."""


class GalleryVersionError(GalleryError):
    """Persisted gallery file uses an unsupported schema version."""


def as_embedding(values) -> np.ndarray:
    """Validate and convert to a float64 vector of exactly 128 finite values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (EMBEDDING_DIM,):
        raise ValueError(f"embedding must have {EMBEDDING_DIM} values, "
                         f"got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding contains non-finite values")
    return arr


def euclidean_distance(a, b) -> float:
    """Plain Euclidean distance between two 128-D embeddings."""
    va = as_embedding(a)
    vb = as_embedding(b)
    return float(np.sqrt(np.sum((va - vb) ** 2)))


@dataclass
class EnrollmentRecord:
    student_id: str
    name: str
    embeddings: list = field(default_factory=list)
    enrolled_at: list = field(default_factory=list)

    def distance_to(self, query: np.ndarray) -> float:
        return min(float(np.sqrt(np.sum((e - query) ** 2)))
                   for e in self.embeddings)


@dataclass(frozen=True)
class MatchResult:
    decision: str
    distance: float
    runner_up_distance: float | None
    threshold_used: float

    @property
    def is_match(self) -> bool:
        return self.decision != UNKNOWN

    def to_json(self) -> dict:
        return {
            "decision": self.decision,
            "distance": self.distance if math.isfinite(self.distance) else None,
            "runner_up_distance": self.runner_up_distance,
            "threshold_used": self.threshold_used,
        }


class Gallery:
    """Enrollment records keyed by student id, with snapshot-consistent reads."""

    def __init__(self, records: list[EnrollmentRecord] | None = None):
        self._lock = threading.Lock()
        snapshot = {}
        for record in records or []:
            if record.student_id in snapshot:
                raise ValueError(f"duplicate student id '{record.student_id}'")
            snapshot[record.student_id] = record
        self._records: dict[str, EnrollmentRecord] = snapshot

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, student_id: str) -> bool:
        return student_id in self._records

    def get(self, student_id: str) -> EnrollmentRecord | None:
        return self._records.get(student_id)

    def records(self) -> list[EnrollmentRecord]:
        return list(self._records.values())

    def enroll(self, student_id: str, name: str, embedding,
               enrolled_at: float | None = None) -> EnrollmentRecord:
        """Append an embedding to a student's record, creating it if new.

        Re-enrolling an identical (id, embedding) pair is a no-op.
        """
        if not student_id:
            raise ValueError("student_id must be a nonempty string")
        vector = as_embedding(embedding)
        stamp = time.time() if enrolled_at is None else float(enrolled_at)
        with self._lock:
            snapshot = dict(self._records)
            existing = snapshot.get(student_id)
            if existing is None:
                record = EnrollmentRecord(student_id, name, [vector], [stamp])
            else:
                if any(np.array_equal(vector, e) for e in existing.embeddings):
                    return existing
                record = EnrollmentRecord(
                    existing.student_id, existing.name,
                    existing.embeddings + [vector],
                    existing.enrolled_at + [stamp],
                )
            snapshot[student_id] = record
            self._records = snapshot
            return record

    def match(self, query, threshold: float = DEFAULT_MATCH_THRESHOLD) -> MatchResult:
        """Nearest record by Euclidean distance; ties go to the smaller id."""
        if threshold <= 0:
            raise ValueError("match threshold must be positive")
        vector = as_embedding(query)
        snapshot = self._records
        best_id = None
        best = math.inf
        runner_up = math.inf
        for student_id, record in snapshot.items():
            d = record.distance_to(vector)
            if d < best or (d == best and (best_id is None or student_id < best_id)):
                if best_id is not None and best_id != student_id:
                    runner_up = min(runner_up, best)
                best, best_id = d, student_id
            else:
                runner_up = min(runner_up, d)
        if best_id is None:
            return MatchResult(UNKNOWN, math.inf, None, threshold)
        decision = best_id if best <= threshold else UNKNOWN
        return MatchResult(decision, best,
                           runner_up if math.isfinite(runner_up) else None,
                           threshold)

    def remove(self, student_id: str) -> bool:
        """Drop a record; returns False when the id was not enrolled."""
        with self._lock:
            if student_id not in self._records:
                return False
            snapshot = dict(self._records)
            del snapshot[student_id]
            self._records = snapshot
            return True

    def save(self, path) -> None:
        """Write the versioned JSON file atomically and durably."""
        payload = {
            "version": GALLERY_VERSION,
            "students": [
                {
                    "id": r.student_id,
                    "name": r.name,
                    "enrolled_at": list(r.enrolled_at),
                    "embeddings": [[float(v) for v in e] for e in r.embeddings],
                }
                for r in self._records.values()
            ],
        }
        path = os.fspath(path)
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "Gallery":
        """Read a versioned gallery file; bit-exact inverse of save()."""
        try:
            with open(path, encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise GalleryFormatError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict) or "version" not in payload:
            raise GalleryFormatError(f"{path}: missing version field")
        if payload["version"] != GALLERY_VERSION:
            raise GalleryVersionError(
                f"{path}: unsupported gallery version {payload['version']} "
                f"(expected {GALLERY_VERSION})")
        records = []
        for index, student in enumerate(payload.get("students", [])):
            label = student.get("id", f"#{index}")
            student_id = student.get("id")
            if not student_id or not isinstance(student_id, str):
                raise GalleryFormatError(
                    f"{path}: record {label!r} has a missing or empty id")
            embeddings = []
            for k, raw in enumerate(student.get("embeddings", [])):
                try:
                    embeddings.append(as_embedding(raw))
                except ValueError as exc:
                    raise GalleryFormatError(
                        f"{path}: student '{student_id}' embedding {k}: {exc}"
                    ) from exc
            if not embeddings:
                raise GalleryFormatError(
                    f"{path}: student '{student_id}' has no embeddings")
            enrolled_at = [float(t) for t in student.get("enrolled_at", [])]
            if len(enrolled_at) != len(embeddings):
                raise GalleryFormatError(
                    f"{path}: student '{student_id}' timestamp count "
                    f"{len(enrolled_at)} != embedding count {len(embeddings)}")
            records.append(EnrollmentRecord(
                student_id, str(student.get("name", "")), embeddings, enrolled_at))
        return cls(records)
