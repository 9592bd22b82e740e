"""HTTP authentication service: detection, enrollment, verification,
gallery management, and an append-only attendance log.

Endpoints live under /api/v1. Images arrive as multipart form data
(field ``image``) or as a JSON body with a base64 ``image_b64`` field.
Every successful verify appends one attendance event per detected face to
a JSONL file, fsynced per line. Gallery mutations are persisted before
the response is sent, so a crash after a 200 never loses an enrollment.
"""

from __future__ import annotations

import base64
import binascii
import json
import math
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from maskver import __version__
from maskver.config import (
    AppConfig,
    DETECTOR_CANDIDATES,
    EMBEDDER_CANDIDATES,
    find_default_model,
)
from maskver.detector import Detection, DetectorConfig, crop_face, detect_faces
from maskver.gallery import Gallery, MatchResult
from maskver.inference import ModelError, ModelHandle, load_model
from maskver.validation import check_chip_batch

MAX_IMAGE_BYTES = 10 * 1024 * 1024


@dataclass
class AttendanceEvent:
    timestamp: float
    decision: str
    distance: float | None
    mask_status: str
    confidence: float
    session_id: str

    def to_json(self) -> dict:
        # field order matters: it is the on-disk JSONL schema
        return {
            "timestamp": self.timestamp,
            "decision": self.decision,
            "distance": self.distance,
            "mask_status": self.mask_status,
            "confidence": self.confidence,
            "session_id": self.session_id,
        }


class AttendanceLog:
    """Append-only JSONL attendance trail, fsynced per event."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, event: AttendanceEvent) -> None:
        line = json.dumps(event.to_json()) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())

    def read(self, since: float | None = None) -> list[dict]:
        if not self.path.exists():
            return []
        events = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            event = json.loads(line)
            if since is None or event.get("timestamp", 0) >= since:
                events.append(event)
        return events


def _decode_image(data: bytes) -> np.ndarray:
    if len(data) > MAX_IMAGE_BYTES:
        raise HTTPException(413, detail="image exceeds 10 MiB limit")
    buffer = np.frombuffer(data, np.uint8)
    frame = cv2.imdecode(buffer, cv2.IMREAD_COLOR)
    if frame is None:
        raise HTTPException(400, detail="request body is not a decodable image")
    return cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)


async def _read_image_request(request: Request) -> tuple[np.ndarray, dict]:
    """Extract (RGB frame, extra fields) from multipart or base64 JSON."""
    content_type = request.headers.get("content-type", "")
    length = request.headers.get("content-length")
    if length and int(length) > MAX_IMAGE_BYTES * 2:
        raise HTTPException(413, detail="request exceeds size limit")
    if content_type.startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("image")
        if upload is None:
            raise HTTPException(400, detail="missing 'image' file field")
        data = await upload.read()
        fields = {k: v for k, v in form.items() if k != "image"}
        return _decode_image(data), fields
    if content_type.startswith("application/json"):
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            raise HTTPException(400, detail="invalid JSON body") from None
        encoded = payload.get("image_b64")
        if not encoded:
            raise HTTPException(400, detail="missing 'image_b64' field")
        try:
            data = base64.b64decode(encoded, validate=True)
        except binascii.Error:
            raise HTTPException(400, detail="invalid base64 image") from None
        fields = {k: v for k, v in payload.items() if k != "image_b64"}
        return _decode_image(data), fields
    raise HTTPException(400, detail=f"unsupported content type '{content_type}'")


def _match_payload(result: MatchResult) -> dict:
    payload = result.to_json()
    if payload["distance"] is not None and not math.isfinite(payload["distance"]):
        payload["distance"] = None
    return payload


class ServiceState:
    def __init__(self, config: AppConfig, detector: ModelHandle | None,
                 embedder: ModelHandle | None, gallery: Gallery):
        self.config = config
        self.detector = detector
        self.embedder = embedder
        self.gallery = gallery
        self.attendance = AttendanceLog(config.resolved_attendance_path())
        self.detector_config = DetectorConfig(
            confidence_threshold=config.conf_threshold,
            nms_iou_threshold=config.nms_iou_threshold,
        )
        self.gallery_lock = threading.Lock()

    def require_models(self) -> tuple[ModelHandle, ModelHandle]:
        if self.detector is None or self.embedder is None:
            raise HTTPException(503, detail="model not loaded")
        return self.detector, self.embedder

    def chip_size(self) -> int:
        return self.embedder.input_specs[0].shape[-1]

    def embed_chip(self, chip: np.ndarray) -> np.ndarray:
        batch = check_chip_batch([chip], self.chip_size())
        handle = self.embedder
        outputs = handle.run({handle.input_specs[0].name: batch})
        return outputs[handle.output_specs[0].name][0]

    def detect(self, frame: np.ndarray) -> list[Detection]:
        detector, _ = self.require_models()
        return detect_faces(frame, detector, self.detector_config)

    def persist_gallery(self) -> None:
        self.gallery.save(self.config.gallery_path)


def _load_gallery(path: str) -> Gallery:
    if Path(path).exists():
        return Gallery.load(path)
    return Gallery()


def create_app(config: AppConfig | None = None,
               detector: ModelHandle | None = None,
               embedder: ModelHandle | None = None,
               gallery: Gallery | None = None) -> FastAPI:
    """Build the service; models not supplied are resolved from config."""
    config = config or AppConfig()
    if detector is None and (config.detector_model or
                             find_default_model(config.model_dir,
                                                DETECTOR_CANDIDATES)):
        name = config.detector_model or find_default_model(
            config.model_dir, DETECTOR_CANDIDATES)
        detector = load_model(name)
    if embedder is None:
        name = config.embedder_model
        if name == "tiny-embedder":
            found = find_default_model(config.model_dir, EMBEDDER_CANDIDATES)
            name = found or name
        embedder = load_model(name)
    state = ServiceState(config, detector, embedder,
                         gallery if gallery is not None
                         else _load_gallery(config.gallery_path))

    app = FastAPI(title="maskver", version=__version__)
    app.state.service = state

    @app.exception_handler(ModelError)
    async def _model_error(request, exc):
        return JSONResponse(status_code=503, content={"detail": str(exc)})

    @app.get("/api/v1/health")
    async def health():
        return {
            "status": "ok",
            "version": __version__,
            "detector_loaded": state.detector is not None,
            "embedder_loaded": state.embedder is not None,
            "gallery_size": len(state.gallery),
        }

    @app.post("/api/v1/detect")
    async def detect(request: Request):
        frame, _ = await _read_image_request(request)
        detections = state.detect(frame)
        return [d.to_json() for d in detections]

    @app.post("/api/v1/enroll")
    async def enroll(request: Request):
        frame, fields = await _read_image_request(request)
        student_id = str(fields.get("student_id", "") or "").strip()
        name = str(fields.get("name", "") or "").strip()
        if not student_id:
            raise HTTPException(400, detail="student_id must not be empty")
        if not name:
            raise HTTPException(400, detail="name must not be empty")
        detections = state.detect(frame)
        if len(detections) != 1:
            raise HTTPException(422, detail={
                "error": "enrollment requires exactly one detected face",
                "faces": len(detections),
            })
        chip = crop_face(frame, detections[0], out_size=state.chip_size())
        embedding = state.embed_chip(chip)
        with state.gallery_lock:
            record = state.gallery.enroll(student_id, name, embedding)
            state.persist_gallery()
        return {
            "student_id": record.student_id,
            "name": record.name,
            "embeddings_count": len(record.embeddings),
        }

    @app.post("/api/v1/verify")
    async def verify(request: Request):
        frame, fields = await _read_image_request(request)
        session_id = str(fields.get("session_id") or uuid.uuid4().hex[:12])
        threshold = fields.get("threshold")
        if threshold is not None:
            try:
                threshold = float(threshold)
            except (TypeError, ValueError):
                raise HTTPException(400, detail="threshold must be a number") from None
            if not 0 < threshold <= 2:
                raise HTTPException(400, detail="threshold must lie in (0, 2]")
        else:
            threshold = state.config.match_threshold
        detections = state.detect(frame)
        faces = []
        for detection in detections:
            chip = crop_face(frame, detection, out_size=state.chip_size())
            embedding = state.embed_chip(chip)
            result = state.gallery.match(embedding, threshold=threshold)
            state.attendance.append(AttendanceEvent(
                timestamp=time.time(),
                decision=result.decision,
                distance=None if not math.isfinite(result.distance)
                else result.distance,
                mask_status=detection.label.name,
                confidence=detection.confidence,
                session_id=session_id,
            ))
            faces.append({
                "detection": detection.to_json(),
                "match": _match_payload(result),
            })
        h, w = frame.shape[:2]
        return {
            "image": {"width": w, "height": h},
            "session_id": session_id,
            "threshold": threshold,
            "faces": faces,
        }

    @app.get("/api/v1/gallery")
    async def gallery_listing():
        return [
            {
                "id": record.student_id,
                "name": record.name,
                "embeddings_count": len(record.embeddings),
                "enrolled_at": record.enrolled_at[-1] if record.enrolled_at else None,
            }
            for record in state.gallery.records()
        ]

    @app.delete("/api/v1/gallery/{student_id}")
    async def gallery_delete(student_id: str):
        with state.gallery_lock:
            removed = state.gallery.remove(student_id)
            if removed:
                state.persist_gallery()
        if not removed:
            raise HTTPException(404, detail=f"student '{student_id}' not enrolled")
        return {"removed": student_id}

    @app.get("/api/v1/attendance")
    async def attendance(since: float | None = None):
        return state.attendance.read(since)

    console_dir = config.console_dir
    if console_dir and Path(console_dir).is_dir():
        app.mount("/console", StaticFiles(directory=console_dir, html=True),
                  name="console")

    return app
