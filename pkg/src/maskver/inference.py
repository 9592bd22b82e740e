"""Backend abstraction over neural-network execution.

Two interchangeable adapters sit behind :class:`ModelHandle`: an ONNX
runtime adapter for real exported detector/embedder weights, and a refnet
adapter backing the packaged tiny embedder for desk-scale tests. Handles
validate tensor shapes on load and on every run, and are safe to share
across threads (forward passes are read-only).

Model files are resolved against ``MASKVER_MODEL_DIR`` when not found at
the given path. Images are converted to network tensors as 8-bit RGB ->
float32 in [0, 1], channel-first, letterboxed with pad value 114/255.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import cv2
import numpy as np

from maskver.geometry import LetterboxTransform, letterbox_for
from maskver.refnet import TinyEmbedder, load_weights

MODEL_DIR_ENV = "MASKVER_MODEL_DIR"
LETTERBOX_FILL = 114


class ModelError(RuntimeError):
    """Raised for missing, corrupt, or spec-incompatible model artifacts."""


@dataclass(frozen=True)
class TensorSpec:
    """Declared tensor interface: name, shape (None = symbolic batch), dtype."""

    name: str
    shape: tuple[int | None, ...]
    dtype: str = "float32"

    def __post_init__(self):
        symbolic = sum(1 for d in self.shape if d is None)
        if symbolic > 1:
            raise ValueError(f"spec {self.name}: at most one symbolic extent allowed")

    def accepts(self, array: np.ndarray) -> bool:
        if array.ndim != len(self.shape):
            return False
        return all(d is None or d == got for d, got in zip(self.shape, array.shape))

    def subsumes(self, other: "TensorSpec") -> bool:
        """True when every tensor admitted by ``other`` is admitted by self."""
        if len(self.shape) != len(other.shape):
            return False
        return all(d is None or d == o for d, o in zip(self.shape, other.shape))


class ModelHandle:
    """A loaded model: declared input/output specs plus a run() method."""

    def __init__(self, identifier: str, input_specs, output_specs):
        self.identifier = identifier
        self.input_specs = tuple(input_specs)
        self.output_specs = tuple(output_specs)

    def run(self, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Execute the model; validates shapes both ways, deterministic."""
        batch = None
        prepared = {}
        for spec in self.input_specs:
            if spec.name not in inputs:
                raise ModelError(f"{self.identifier}: missing input '{spec.name}'")
            array = np.asarray(inputs[spec.name])
            if not spec.accepts(array):
                raise ModelError(
                    f"{self.identifier}: input '{spec.name}' has shape "
                    f"{array.shape}, expected {spec.shape}")
            for want, got in zip(spec.shape, array.shape):
                if want is None:
                    batch = got
            prepared[spec.name] = array.astype(spec.dtype, copy=False)
        outputs = self._execute(prepared, batch)
        for spec in self.output_specs:
            array = outputs.get(spec.name)
            if array is None or not spec.accepts(array):
                got = None if array is None else array.shape
                raise ModelError(
                    f"{self.identifier}: output '{spec.name}' has shape "
                    f"{got}, declared {spec.shape}")
        return outputs

    def _execute(self, inputs, batch):
        raise NotImplementedError


class RefnetEmbedderModel(ModelHandle):
    """Tiny-embedder adapter: (batch, 3, 64, 64) chips -> (batch, 128)."""

    def __init__(self, net: TinyEmbedder, identifier: str = "tiny-embedder"):
        self.net = net
        size = net.input_size
        super().__init__(
            identifier,
            input_specs=[TensorSpec("chips", (None, 3, size, size))],
            output_specs=[TensorSpec("embeddings", (None, net.output_dim))],
        )

    def _execute(self, inputs, batch):
        chips = inputs["chips"]
        out = np.stack([self.net.embed(chip) for chip in chips]) if len(chips) \
            else np.zeros((0, self.net.output_dim), np.float32)
        return {"embeddings": out}


class OnnxModel(ModelHandle):
    """Adapter over an onnxruntime InferenceSession (CPU provider)."""

    def __init__(self, path: Path):
        try:
            import onnxruntime as ort
        except ImportError as exc:
            raise ModelError(
                "ONNX models require the optional onnxruntime dependency "
                "(pip install maskver[onnx])") from exc
        try:
            self.session = ort.InferenceSession(
                str(path), providers=["CPUExecutionProvider"])
        except Exception as exc:
            raise ModelError(f"{path}: failed to load ONNX model: {exc}") from exc
        super().__init__(
            str(path),
            input_specs=[_spec_from_onnx(t) for t in self.session.get_inputs()],
            output_specs=[_spec_from_onnx(t) for t in self.session.get_outputs()],
        )

    def _execute(self, inputs, batch):
        results = self.session.run(None, inputs)
        return {spec.name: np.asarray(r)
                for spec, r in zip(self.output_specs, results)}


def _spec_from_onnx(tensor) -> TensorSpec:
    shape = tuple(d if isinstance(d, int) else None for d in tensor.shape)
    dtype = "float32" if "float" in tensor.type else "float64"
    return TensorSpec(tensor.name, shape, dtype)


def resolve_model_path(name: str | Path) -> Path:
    """Find a model file: as given, then under MASKVER_MODEL_DIR."""
    path = Path(name)
    if path.exists():
        return path
    model_dir = os.environ.get(MODEL_DIR_ENV)
    if model_dir:
        candidate = Path(model_dir) / path
        if candidate.exists():
            return candidate
    raise ModelError(f"model file not found: {name}"
                     + (f" (searched {model_dir})" if model_dir else ""))


def packaged_tiny_embedder() -> RefnetEmbedderModel:
    ref = resources.files("maskver").joinpath("data/tiny_embedder.refnet")
    with resources.as_file(ref) as path:
        return RefnetEmbedderModel(TinyEmbedder.from_weights(load_weights(path)))


def load_model(name: str | Path, expected_inputs=None,
               expected_outputs=None) -> ModelHandle:
    """Load a model by id or path and check it against expected specs.

    Accepts the built-in id ``tiny-embedder``, ``*.refnet`` weight files,
    ``*.onnx`` models, and ``*.stub.json`` synthetic detector fixtures.
    """
    if str(name) == "tiny-embedder":
        handle = packaged_tiny_embedder()
    else:
        path = resolve_model_path(name)
        suffix = "".join(path.suffixes[-2:]) if path.name.endswith(".stub.json") \
            else path.suffix
        if suffix == ".refnet":
            try:
                net = TinyEmbedder.from_weights(load_weights(path))
            except ValueError as exc:
                raise ModelError(str(exc)) from exc
            handle = RefnetEmbedderModel(net, identifier=str(path))
        elif suffix == ".onnx":
            handle = OnnxModel(path)
        elif suffix == ".stub.json":
            from maskver.detector import StubDetectorModel

            handle = StubDetectorModel.from_file(path)
        else:
            raise ModelError(f"{path}: unsupported model format '{path.suffix}'")
    _check_specs(handle, handle.input_specs, expected_inputs, "input")
    _check_specs(handle, handle.output_specs, expected_outputs, "output")
    return handle


def _check_specs(handle, declared, expected, kind):
    if expected is None:
        return
    expected = list(expected)
    if len(expected) != len(declared):
        raise ModelError(
            f"{handle.identifier}: expected {len(expected)} {kind}s, "
            f"model declares {len(declared)}")
    for want, have in zip(expected, declared):
        want_shape = tuple(want.shape) if isinstance(want, TensorSpec) else tuple(want)
        probe = TensorSpec(have.name, want_shape)
        if not have.subsumes(probe) and not probe.subsumes(have):
            raise ModelError(
                f"{handle.identifier}: {kind} '{have.name}' spec mismatch: "
                f"expected {want_shape}, found {have.shape}")


def image_to_network_tensor(
    frame_rgb: np.ndarray, dst: int = 640
) -> tuple[np.ndarray, LetterboxTransform]:
    """Letterbox an RGB uint8 frame into a (1, 3, dst, dst) float32 tensor."""
    if frame_rgb.ndim != 3 or frame_rgb.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB frame, got shape {frame_rgb.shape}")
    h, w = frame_rgb.shape[:2]
    t = letterbox_for(w, h, dst)
    new_w = max(1, round(w * t.scale))
    new_h = max(1, round(h * t.scale))
    resized = cv2.resize(frame_rgb, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    canvas = np.full((dst, dst, 3), LETTERBOX_FILL, dtype=np.uint8)
    x0 = int(round(t.pad_x))
    y0 = int(round(t.pad_y))
    canvas[y0:y0 + new_h, x0:x0 + new_w] = resized
    tensor = canvas.astype(np.float32) / 255.0
    return tensor.transpose(2, 0, 1)[None], t
