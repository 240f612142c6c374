"""Frame preprocessing (center-crop, letterbox pad, resize) and 2x2
multi-view tiling.

Preprocess geometry, pinned for reproducibility:

1. center-crop to the largest square (odd leftovers split floor-left/top,
   ceil-right/bottom)
2. add black bars above and below, 8% of the square side per bar by
   default; the total bar height is round-half-up(2 * fraction * side)
   and an odd total puts the extra row on the bottom
3. bilinear resample to out_size x out_size with the half-pixel-center
   convention (src = (dst + 0.5) * scale - 0.5), channels rounded half up

Tiles are row-major: slot 0 top-left, 1 top-right, 2 bottom-left,
3 bottom-right; missing slots stay black. tile/untile are exact inverses
at native resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_PAD_FRACTION = 0.08
ROW_MAJOR_SLOTS = ("top_left", "top_right", "bottom_left", "bottom_right")


@dataclass(frozen=True)
class TileLayout:
    tile_size: int
    order: tuple[str, ...] = ()  # slot labels, row-major; may name fewer than 4

    def __post_init__(self):
        if self.tile_size <= 0:
            raise ValueError("tile_size must be > 0")
        if len(self.order) > 4:
            raise ValueError("a 2x2 layout holds at most 4 views")


def _check_rgb(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ValueError(f"expected HxWx3 uint8 image, got {a.dtype} {a.shape}")
    return a


def center_crop_square(img: np.ndarray) -> np.ndarray:
    a = _check_rgb(img)
    h, w = a.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return a[top : top + side, left : left + side]


def letterbox(img: np.ndarray, fraction: float) -> np.ndarray:
    a = _check_rgb(img)
    if fraction == 0.0:
        return a
    side = a.shape[0]
    total = int(np.floor(2.0 * fraction * side + 0.5))
    top = total // 2
    bottom = total - top
    return np.pad(a, ((top, bottom), (0, 0), (0, 0)), mode="constant")


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resample, rounded half up to uint8."""
    a = _check_rgb(img)
    h, w = a.shape[:2]
    if (h, w) == (out_h, out_w):
        return a.copy()

    def axis_coords(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
        src = np.clip(src, 0.0, n_src - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_src - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    af = a.astype(np.float64)
    top = af[y0][:, x0] * (1 - fx)[None, :, None] + af[y0][:, x1] * fx[None, :, None]
    bot = af[y1][:, x0] * (1 - fx)[None, :, None] + af[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def preprocess(img: np.ndarray, out_size: int, pad_fraction: float = DEFAULT_PAD_FRACTION) -> np.ndarray:
    """Crop -> letterbox -> resize; output is always out_size x out_size."""
    if out_size <= 0:
        raise ValueError("out_size must be > 0")
    return resize_bilinear(letterbox(center_crop_square(img), pad_fraction), out_size, out_size)


def tile(views: list[tuple[str, np.ndarray]], layout: TileLayout) -> np.ndarray:
    """Compose 1-4 labeled views into a 2*tile_size square, row-major."""
    if not 1 <= len(views) <= 4:
        raise ValueError(f"need 1-4 views, got {len(views)}")
    labels = [label for label, _ in views]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate view labels: {labels}")
    ts = layout.tile_size
    out = np.zeros((2 * ts, 2 * ts, 3), dtype=np.uint8)
    for k, (label, img) in enumerate(views):
        a = _check_rgb(img)
        if a.shape[:2] != (ts, ts):
            raise ValueError(f"view '{label}' is {a.shape[:2]}, expected {(ts, ts)}")
        row, col = divmod(k, 2)
        out[row * ts : (row + 1) * ts, col * ts : (col + 1) * ts] = a
    return out


def untile(img: np.ndarray, layout: TileLayout, labels: list[str]) -> list[tuple[str, np.ndarray]]:
    """Split a tiled frame back into labeled quadrants (extra quadrants dropped)."""
    a = _check_rgb(img)
    ts = layout.tile_size
    if a.shape[:2] != (2 * ts, 2 * ts):
        raise ValueError(f"tiled image is {a.shape[:2]}, expected {(2 * ts, 2 * ts)}")
    if not 1 <= len(labels) <= 4:
        raise ValueError("need 1-4 labels")
    out = []
    for k, label in enumerate(labels):
        row, col = divmod(k, 2)
        out.append((label, a[row * ts : (row + 1) * ts, col * ts : (col + 1) * ts].copy()))
    return out


def tile_edge_maps(maps: list[np.ndarray], tile_size: int) -> np.ndarray:
    """Row-major 2x2 composition of single-channel edge maps, blanks zero."""
    if not 1 <= len(maps) <= 4:
        raise ValueError(f"need 1-4 maps, got {len(maps)}")
    out = np.zeros((2 * tile_size, 2 * tile_size), dtype=np.uint8)
    for k, m in enumerate(maps):
        if m.shape != (tile_size, tile_size):
            raise ValueError(f"map {k} is {m.shape}, expected {(tile_size, tile_size)}")
        row, col = divmod(k, 2)
        out[row * tile_size : (row + 1) * tile_size, col * tile_size : (col + 1) * tile_size] = m
    return out
