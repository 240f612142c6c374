"""PNG encode/decode helpers (Pillow-backed, deterministic settings)."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def encode_png(arr: np.ndarray) -> bytes:
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 array, got {arr.dtype}")
    if arr.ndim == 2:
        img = Image.fromarray(arr, mode="L")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        img = Image.fromarray(arr, mode="RGB")
    else:
        raise ValueError(f"unsupported array shape {arr.shape}")
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    img = Image.open(io.BytesIO(data))
    if img.mode == "L":
        return np.asarray(img, dtype=np.uint8)
    return np.asarray(img.convert("RGB"), dtype=np.uint8)


def save_png(arr: np.ndarray, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(arr))


def load_png(path: str | Path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())
