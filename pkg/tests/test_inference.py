import json
from pathlib import Path

import numpy as np
import pytest

from maskver.inference import (
    ModelError,
    TensorSpec,
    image_to_network_tensor,
    load_model,
    packaged_tiny_embedder,
)
from maskver.refnet import build_tiny_embedder_weights, save_weights

DATA_DIR = Path(__file__).parent / "data"


class TestTensorSpec:
    def test_accepts_symbolic_batch(self):
        spec = TensorSpec("x", (None, 3, 64, 64))
        assert spec.accepts(np.zeros((5, 3, 64, 64)))
        assert not spec.accepts(np.zeros((5, 3, 32, 32)))
        assert not spec.accepts(np.zeros((3, 64, 64)))

    def test_at_most_one_symbolic_extent(self):
        with pytest.raises(ValueError):
            TensorSpec("x", (None, None, 3))

    def test_subsumes(self):
        wide = TensorSpec("x", (None, 128))
        narrow = TensorSpec("x", (1, 128))
        assert wide.subsumes(narrow)
        assert not narrow.subsumes(wide)


class TestLoadModel:
    def test_tiny_embedder_by_id(self):
        handle = load_model("tiny-embedder",
                            expected_inputs=[(1, 3, 64, 64)],
                            expected_outputs=[(1, 128)])
        assert handle.output_specs[0].shape == (None, 128)

    def test_spec_mismatch_reports_both_shapes(self):
        with pytest.raises(ModelError, match=r"expected.*320.*found|found.*64"):
            load_model("tiny-embedder", expected_inputs=[(1, 3, 320, 320)])

    def test_missing_file(self):
        with pytest.raises(ModelError, match="not found"):
            load_model("no_such_model.onnx")

    def test_model_dir_search(self, tmp_path, monkeypatch):
        weights = build_tiny_embedder_weights()
        save_weights(weights, tmp_path / "embedder.refnet")
        monkeypatch.setenv("MASKVER_MODEL_DIR", str(tmp_path))
        handle = load_model("embedder.refnet")
        assert handle.input_specs[0].shape == (None, 3, 64, 64)

    def test_corrupt_refnet_file(self, tmp_path):
        bad = tmp_path / "bad.refnet"
        bad.write_bytes(b"RFN1" + b"\xff" * 3)
        with pytest.raises(ModelError):
            load_model(bad)

    def test_stub_detector_file(self, tmp_path):
        payload = {"kind": "stub_detector", "input_size": 640, "faces": [
            {"box": [100, 100, 200, 200], "class": "mask", "confidence": 0.9},
        ]}
        path = tmp_path / "detector.stub.json"
        path.write_text(json.dumps(payload))
        handle = load_model(path)
        assert handle.input_specs[0].shape == (1, 3, 640, 640)
        assert len(handle.output_specs) == 3


class TestRun:
    def test_zero_chip_matches_golden(self):
        handle = packaged_tiny_embedder()
        out = handle.run({"chips": np.zeros((1, 3, 64, 64), np.float32)})
        golden = np.array(json.load(open(DATA_DIR / "golden_zero_chip.json")),
                          dtype=np.float32)
        assert np.array_equal(out["embeddings"][0], golden)

    def test_repeat_runs_bitwise_identical(self):
        handle = packaged_tiny_embedder()
        chip = np.random.default_rng(0).uniform(size=(1, 3, 64, 64)).astype(np.float32)
        a = handle.run({"chips": chip})["embeddings"]
        b = handle.run({"chips": chip})["embeddings"]
        assert a.tobytes() == b.tobytes()

    def test_symbolic_batch_propagates(self):
        handle = packaged_tiny_embedder()
        out = handle.run({"chips": np.zeros((2, 3, 64, 64), np.float32)})
        assert out["embeddings"].shape == (2, 128)

    def test_shape_mismatch_rejected(self):
        handle = packaged_tiny_embedder()
        with pytest.raises(ModelError, match="shape"):
            handle.run({"chips": np.zeros((1, 3, 32, 32), np.float32)})

    def test_missing_input_rejected(self):
        handle = packaged_tiny_embedder()
        with pytest.raises(ModelError, match="missing input"):
            handle.run({"frames": np.zeros((1, 3, 64, 64), np.float32)})

    def test_outputs_match_declared_specs(self):
        handle = packaged_tiny_embedder()
        out = handle.run({"chips": np.zeros((3, 3, 64, 64), np.float32)})
        for spec in handle.output_specs:
            assert spec.accepts(out[spec.name])


class TestImageToTensor:
    def test_shape_range_and_layout(self):
        frame = np.zeros((720, 1280, 3), np.uint8)
        frame[:, :, 0] = 255  # pure red frame
        tensor, t = image_to_network_tensor(frame)
        assert tensor.shape == (1, 3, 640, 640)
        assert tensor.dtype == np.float32
        assert t.scale == 0.5
        # content rows hold red (1.0 in channel 0), padding rows hold 114/255
        assert tensor[0, 0, 320, 320] == 1.0
        assert tensor[0, 1, 320, 320] == 0.0
        assert tensor[0, 0, 0, 0] == pytest.approx(114 / 255)
        assert tensor[0, 1, 0, 0] == pytest.approx(114 / 255)

    def test_pad_band_placement(self):
        frame = np.full((720, 1280, 3), 200, np.uint8)
        tensor, t = image_to_network_tensor(frame)
        assert t.pad_y == 140.0
        assert np.all(tensor[0, :, :140, :] == np.float32(114 / 255))
        assert np.all(tensor[0, :, 500:, :] == np.float32(114 / 255))
        assert np.all(tensor[0, :, 140:500, :] == np.float32(200 / 255))

    def test_rejects_non_rgb(self):
        with pytest.raises(ValueError):
            image_to_network_tensor(np.zeros((64, 64), np.uint8))
