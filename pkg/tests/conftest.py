import cv2
import numpy as np
import pytest

from maskver.detector import DetectionClass, StubDetectorModel
from maskver.geometry import BoundingBox

# Face box in 640x640 network coordinates; for a 640x480 frame the
# letterbox is scale 1, pad_y 80, so this lands at (200, 120)-(320, 240).
NETWORK_FACE_BOX = BoundingBox(200, 200, 320, 320)
FRAME_SIZE = (480, 640)  # h, w


def identity_frame(k: int, size=FRAME_SIZE) -> np.ndarray:
    """Deterministic synthetic RGB frame; distinct pattern per identity."""
    h, w = size
    rng = np.random.default_rng(1000 + k)
    frame = np.zeros((h, w, 3), np.uint8)
    frame[:, :, 0] = (k * 23) % 256
    frame[:, :, 1] = rng.integers(0, 255, (h, w), dtype=np.uint8)
    frame[:, :, 2] = np.linspace(0, 255, w, dtype=np.uint8)[None, :]
    cv2.rectangle(frame, (230 + 3 * k, 140 + 2 * k), (300 + 3 * k, 220 + 2 * k),
                  (255, 255, 255), -1)
    return frame


def png_bytes(frame_rgb: np.ndarray) -> bytes:
    ok, encoded = cv2.imencode(".png", cv2.cvtColor(frame_rgb, cv2.COLOR_RGB2BGR))
    assert ok
    return encoded.tobytes()


def one_face_stub(label=DetectionClass.mask, confidence=0.9):
    return StubDetectorModel([(NETWORK_FACE_BOX, label, confidence)])


def two_face_stub():
    return StubDetectorModel([
        (NETWORK_FACE_BOX, DetectionClass.mask, 0.9),
        (BoundingBox(400, 200, 520, 320), DetectionClass.no_mask, 0.8),
    ])


@pytest.fixture
def service_factory(tmp_path):
    """Builds TestClients over fresh app instances sharing tmp_path state."""
    from fastapi.testclient import TestClient

    from maskver.config import AppConfig
    from maskver.service import create_app

    def build(detector=None, gallery_name="gallery.json", **config_kwargs):
        config = AppConfig(
            gallery_path=str(tmp_path / gallery_name),
            attendance_path=str(tmp_path / "attendance.jsonl"),
            **config_kwargs,
        )
        app = create_app(config=config,
                         detector=detector if detector is not None
                         else one_face_stub())
        return TestClient(app)

    return build
