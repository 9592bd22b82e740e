"""Minimal from-scratch residual network used as a deterministic tiny embedder.

Tensors are numpy float32 arrays in channel-first (C, H, W) layout. All
operations are pure functions of their inputs; weights are loaded or seeded,
never sampled at call time, so forward passes are bit-for-bit reproducible.

Weight file format (little-endian throughout):

    magic   b"RFN1"
    records, each:
        uint32  name length in bytes
        bytes   utf-8 tensor name
        uint32  ndim
        uint32  dims[ndim]
        float32 data[prod(dims)], row-major

Convolutions are evaluated with ``np.einsum(optimize=False)`` so the
summation order is fixed and results never depend on BLAS threading.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WEIGHT_MAGIC = b"RFN1"
EMBEDDING_DIM = 128
CHIP_SIZE = 64
BN_EPS = 1e-5

DEFAULT_SEED = 314159


def silu(x: np.ndarray) -> np.ndarray:
    """Elementwise x * sigmoid(x), same shape and dtype as the input."""
    x = np.asarray(x)
    return (x / (1.0 + np.exp(-x))).astype(x.dtype)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None,
           stride: int = 1, pad: int = 0) -> np.ndarray:
    """Cross-correlate a (C, H, W) tensor with a (Co, C, kh, kw) kernel."""
    if x.ndim != 3 or weight.ndim != 4:
        raise ValueError(f"conv2d expects (C,H,W) input and (Co,Ci,kh,kw) kernel, "
                         f"got {x.shape} and {weight.shape}")
    cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"channel mismatch: input has {cin}, kernel expects {cin_w}")
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ph, pw = x.shape[1], x.shape[2]
    if ph < kh or pw < kw:
        raise ValueError(f"input {ph}x{pw} smaller than kernel {kh}x{kw}")
    ho = (ph - kh) // stride + 1
    wo = (pw - kw) // stride + 1
    s0, s1, s2 = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x, shape=(cin, kh, kw, ho, wo),
        strides=(s0, s1, s2, s1 * stride, s2 * stride), writeable=False)
    out = np.einsum("ockl,cklhw->ohw", weight, windows, optimize=False)
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"bias shape {bias.shape} != ({cout},)")
        out = out + bias[:, None, None]
    return out.astype(x.dtype)


@dataclass(frozen=True)
class BatchNormParams:
    """Per-channel affine normalization statistics; variance must be positive."""

    mean: np.ndarray
    var: np.ndarray
    gain: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        n = self.mean.shape[0]
        for name in ("var", "gain", "bias"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"batch-norm {name} shape mismatch")
        if np.any(self.var <= 0):
            raise ValueError("batch-norm variance must be positive")

    @classmethod
    def identity(cls, channels: int) -> "BatchNormParams":
        return cls(
            mean=np.zeros(channels, dtype=np.float32),
            var=np.ones(channels, dtype=np.float32),
            gain=np.ones(channels, dtype=np.float32),
            bias=np.zeros(channels, dtype=np.float32),
        )


def batch_norm(x: np.ndarray, p: BatchNormParams, eps: float = BN_EPS) -> np.ndarray:
    """Affine normalization (x - mean) / sqrt(var + eps) * gain + bias."""
    if x.shape[0] != p.mean.shape[0]:
        raise ValueError(f"batch_norm channels {p.mean.shape[0]} != input {x.shape[0]}")
    scale = (p.gain / np.sqrt(p.var + np.float32(eps))).astype(x.dtype)
    shift = (p.bias - p.mean * scale).astype(x.dtype)
    return x * scale[:, None, None] + shift[:, None, None]


@dataclass(frozen=True)
class ResidualBlockParams:
    """Two convolutions with batch norms; 1x1 projection when the shape changes.

    The residual branch is conv1 -> bn1 -> conv2 -> bn2 with no internal
    activation, so a zero-initialized branch leaves the input untouched.
    """

    conv1: np.ndarray
    bn1: BatchNormParams
    conv2: np.ndarray
    bn2: BatchNormParams
    projection: np.ndarray | None = None
    stride: int = 1

    @property
    def in_channels(self) -> int:
        return self.conv1.shape[1]

    @property
    def out_channels(self) -> int:
        return self.conv2.shape[0]

    def changes_shape(self) -> bool:
        return self.stride != 1 or self.in_channels != self.out_channels


def residual_block(x: np.ndarray, p: ResidualBlockParams) -> np.ndarray:
    """H(x) = F(x) + x, with a projected skip when F changes the shape."""
    if x.shape[0] != p.in_channels:
        raise ValueError(f"block expects {p.in_channels} channels, got {x.shape[0]}")
    if p.changes_shape() and p.projection is None:
        raise ValueError("shape-changing block requires a projection kernel")
    if not p.changes_shape() and p.projection is not None:
        raise ValueError("projection given for a shape-preserving block")
    out = conv2d(x, p.conv1, stride=p.stride, pad=(p.conv1.shape[2] - 1) // 2)
    out = batch_norm(out, p.bn1)
    out = conv2d(out, p.conv2, stride=1, pad=(p.conv2.shape[2] - 1) // 2)
    out = batch_norm(out, p.bn2)
    if p.projection is not None:
        skip = conv2d(x, p.projection, stride=p.stride, pad=0)
    else:
        skip = x
    if skip.shape != out.shape:
        raise ValueError(f"skip shape {skip.shape} incompatible with branch {out.shape}")
    return out + skip


class TinyEmbedder:
    """Six-block strided residual network mapping a 3x64x64 chip to 128 values.

    Stem conv + batch norm, then residual blocks (SiLU between blocks),
    global average pooling, and a final linear layer. Output is not
    length-normalized; identities are compared by raw Euclidean distance.
    """

    input_size = CHIP_SIZE
    output_dim = EMBEDDING_DIM

    def __init__(self, stem_conv, stem_bn, blocks, fc_weight, fc_bias):
        self.stem_conv = stem_conv
        self.stem_bn = stem_bn
        self.blocks = list(blocks)
        self.fc_weight = fc_weight
        self.fc_bias = fc_bias
        if fc_weight.shape[0] != EMBEDDING_DIM:
            raise ValueError(f"final layer must emit {EMBEDDING_DIM} values")

    def embed(self, chip: np.ndarray) -> np.ndarray:
        """Forward pass for one (3, 64, 64) chip with values in [0, 1]."""
        chip = np.asarray(chip)
        if chip.shape != (3, CHIP_SIZE, CHIP_SIZE):
            raise ValueError(f"expected chip of shape (3, {CHIP_SIZE}, {CHIP_SIZE}), "
                             f"got {chip.shape}")
        x = chip.astype(np.float32)
        x = silu(batch_norm(conv2d(x, self.stem_conv, stride=1, pad=1), self.stem_bn))
        for block in self.blocks:
            x = silu(residual_block(x, block))
        pooled = x.mean(axis=(1, 2), dtype=np.float32)
        return (self.fc_weight @ pooled + self.fc_bias).astype(np.float32)

    def to_weights(self) -> dict[str, np.ndarray]:
        out = {"stem.conv.weight": self.stem_conv}
        out.update(_bn_entries("stem.bn", self.stem_bn))
        for i, b in enumerate(self.blocks, start=1):
            out[f"block{i}.conv1.weight"] = b.conv1
            out.update(_bn_entries(f"block{i}.bn1", b.bn1))
            out[f"block{i}.conv2.weight"] = b.conv2
            out.update(_bn_entries(f"block{i}.bn2", b.bn2))
            if b.projection is not None:
                out[f"block{i}.proj.weight"] = b.projection
        out["fc.weight"] = self.fc_weight
        out["fc.bias"] = self.fc_bias
        return out

    @classmethod
    def from_weights(cls, weights: dict[str, np.ndarray]) -> "TinyEmbedder":
        try:
            stem_conv = weights["stem.conv.weight"]
            stem_bn = _bn_from(weights, "stem.bn")
            blocks = []
            i = 1
            while f"block{i}.conv1.weight" in weights:
                conv1 = weights[f"block{i}.conv1.weight"]
                conv2 = weights[f"block{i}.conv2.weight"]
                proj = weights.get(f"block{i}.proj.weight")
                blocks.append(ResidualBlockParams(
                    conv1=conv1,
                    bn1=_bn_from(weights, f"block{i}.bn1"),
                    conv2=conv2,
                    bn2=_bn_from(weights, f"block{i}.bn2"),
                    projection=proj,
                    stride=2 if proj is not None else 1,
                ))
                i += 1
            return cls(stem_conv, stem_bn, blocks,
                       weights["fc.weight"], weights["fc.bias"])
        except KeyError as exc:
            raise ValueError(f"embedder weights missing tensor {exc}") from exc


def _bn_entries(prefix: str, p: BatchNormParams) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.mean": p.mean,
        f"{prefix}.var": p.var,
        f"{prefix}.gain": p.gain,
        f"{prefix}.bias": p.bias,
    }


def _bn_from(weights: dict[str, np.ndarray], prefix: str) -> BatchNormParams:
    return BatchNormParams(
        mean=weights[f"{prefix}.mean"],
        var=weights[f"{prefix}.var"],
        gain=weights[f"{prefix}.gain"],
        bias=weights[f"{prefix}.bias"],
    )


def save_weights(weights: dict[str, np.ndarray], path: str | Path) -> None:
    """Write named float32 tensors in the RFN1 binary layout."""
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        for name, tensor in weights.items():
            data = np.ascontiguousarray(tensor, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    """Read an RFN1 weight file back into a name -> float32 array mapping."""
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHT_MAGIC:
        raise ValueError(f"{path}: not a refnet weight file (bad magic)")
    weights: dict[str, np.ndarray] = {}
    offset = 4
    try:
        while offset < len(raw):
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset:offset + name_len].decode("utf-8")
            if len(raw[offset:offset + name_len]) != name_len:
                raise ValueError(f"{path}: truncated record name")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            dims = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
            end = offset + 4 * count
            if end > len(raw):
                raise ValueError(f"{path}: truncated data for tensor '{name}'")
            weights[name] = np.frombuffer(
                raw, dtype="<f4", count=count, offset=offset
            ).reshape(dims).copy()
            offset = end
    except struct.error as exc:
        raise ValueError(f"{path}: corrupt weight file ({exc})") from exc
    return weights


def build_tiny_embedder_weights(seed: int = DEFAULT_SEED) -> dict[str, np.ndarray]:
    """Generate the committed tiny-embedder weights from a fixed seed."""
    rng = np.random.default_rng(seed)

    def he(co, ci, k):
        std = np.sqrt(2.0 / (ci * k * k))
        return rng.normal(0.0, std, size=(co, ci, k, k)).astype(np.float32)

    def bn(ch):
        return {
            "mean": rng.normal(0.0, 0.05, ch).astype(np.float32),
            "var": (1.0 + rng.uniform(-0.2, 0.2, ch)).astype(np.float32),
            "gain": (1.0 + rng.normal(0.0, 0.1, ch)).astype(np.float32),
            "bias": rng.normal(0.0, 0.05, ch).astype(np.float32),
        }

    plan = [  # (in, out, stride)
        (8, 8, 1), (8, 16, 2), (16, 16, 1), (16, 32, 2), (32, 32, 1), (32, 64, 2),
    ]
    weights: dict[str, np.ndarray] = {"stem.conv.weight": he(8, 3, 3)}
    for key, value in bn(8).items():
        weights[f"stem.bn.{key}"] = value
    for i, (cin, cout, stride) in enumerate(plan, start=1):
        weights[f"block{i}.conv1.weight"] = he(cout, cin, 3)
        for key, value in bn(cout).items():
            weights[f"block{i}.bn1.{key}"] = value
        weights[f"block{i}.conv2.weight"] = he(cout, cout, 3)
        for key, value in bn(cout).items():
            weights[f"block{i}.bn2.{key}"] = value
        if stride != 1 or cin != cout:
            weights[f"block{i}.proj.weight"] = he(cout, cin, 1)
    # Wide final layer so distinct inputs land far apart in embedding space.
    weights["fc.weight"] = rng.normal(0.0, 4.0 / np.sqrt(64), (128, 64)).astype(np.float32)
    weights["fc.bias"] = rng.normal(0.0, 0.1, 128).astype(np.float32)
    return weights
