"""Input validation helpers shared by the estimator wrappers and service."""

from __future__ import annotations

import numpy as np


def check_rgb_frame(frame) -> np.ndarray:
    """Require an 8-bit HxWx3 RGB frame."""
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an HxWx3 RGB frame, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    return arr


def check_frame_batch(X) -> list[np.ndarray]:
    """Accept a list/tuple of frames or an (n, H, W, 3) array."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        return [check_rgb_frame(f) for f in X]
    if isinstance(X, (list, tuple)):
        return [check_rgb_frame(f) for f in X]
    raise ValueError("expected a sequence of RGB frames or an (n, H, W, 3) array")


def check_chip_batch(X, size: int = 64) -> np.ndarray:
    """Normalize chips to an (n, 3, size, size) float32 tensor in [0, 1].

    Accepts channel-first float batches, or HxWx3 uint8 chips (single or
    a sequence), which are scaled by 1/255.
    """
    if isinstance(X, np.ndarray) and X.ndim == 4 and X.shape[1] == 3:
        batch = X.astype(np.float32, copy=False)
    else:
        chips = [X] if isinstance(X, np.ndarray) and X.ndim == 3 else list(X)
        converted = []
        for chip in chips:
            arr = np.asarray(chip)
            if arr.ndim != 3:
                raise ValueError(f"chip must be 3-dimensional, got {arr.shape}")
            if arr.shape[0] == 3 and arr.shape[2] != 3:
                converted.append(arr.astype(np.float32))
            elif arr.shape[2] == 3:
                converted.append(arr.astype(np.float32).transpose(2, 0, 1) / 255.0)
            else:
                raise ValueError(f"chip shape {arr.shape} is neither CHW nor HWC")
        batch = np.stack(converted) if converted else np.zeros((0, 3, size, size),
                                                               np.float32)
    if batch.shape[1:] != (3, size, size):
        raise ValueError(f"chips must be (n, 3, {size}, {size}), got {batch.shape}")
    return batch


def check_embedding_matrix(X, dim: int = 128) -> np.ndarray:
    """Require an (n, dim) matrix of finite embedding values."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == dim:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"expected an (n, {dim}) embedding matrix, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding matrix contains non-finite values")
    return arr
