"""Runtime configuration: flags > environment > config file > defaults.

Environment variables: MASKVER_GALLERY_PATH, MASKVER_MODEL_DIR,
MASKVER_THRESHOLD. An optional JSON config file uses the same keys.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from maskver.inference import MODEL_DIR_ENV

GALLERY_ENV = "MASKVER_GALLERY_PATH"
THRESHOLD_ENV = "MASKVER_THRESHOLD"

ENV_KEYS = {
    GALLERY_ENV: "gallery_path",
    MODEL_DIR_ENV: "model_dir",
    THRESHOLD_ENV: "match_threshold",
}

DETECTOR_CANDIDATES = ("detector.onnx", "detector.stub.json")
EMBEDDER_CANDIDATES = ("embedder.onnx", "embedder.refnet")


@dataclass
class AppConfig:
    gallery_path: str = "gallery.json"
    model_dir: str | None = None
    detector_model: str | None = None
    embedder_model: str = "tiny-embedder"
    match_threshold: float = 0.6
    conf_threshold: float = 0.25
    nms_iou_threshold: float = 0.45
    listen: str = "127.0.0.1:8000"
    attendance_path: str | None = None
    console_dir: str | None = None

    def resolved_attendance_path(self) -> Path:
        if self.attendance_path:
            return Path(self.attendance_path)
        return Path(self.gallery_path).with_name("attendance.jsonl")

    def echo(self) -> str:
        pairs = [(f.name, getattr(self, f.name)) for f in fields(self)]
        return "\n".join(f"{name} = {value}" for name, value in pairs)


def load_config(overrides: dict | None = None,
                config_file: str | Path | None = None) -> AppConfig:
    """Merge defaults, config file, environment, and explicit overrides."""
    values: dict = {}
    if config_file:
        payload = json.loads(Path(config_file).read_text())
        for key, value in payload.items():
            attr = ENV_KEYS.get(key, key.lower())
            values[attr] = value
    for env_key, attr in ENV_KEYS.items():
        if env_key in os.environ:
            values[attr] = os.environ[env_key]
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    known = {f.name for f in fields(AppConfig)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "match_threshold" in values:
        values["match_threshold"] = float(values["match_threshold"])
    return AppConfig(**values)


def find_default_model(model_dir: str | None, candidates) -> str | None:
    """First existing candidate model file under model_dir, if any."""
    search = model_dir or os.environ.get(MODEL_DIR_ENV)
    if not search:
        return None
    for name in candidates:
        path = Path(search) / name
        if path.exists():
            return str(path)
    return None
