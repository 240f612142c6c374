"""Edge-map extraction for control videos: Canny detection plus the
thickening / gap-bridging post-filters.

The detector is the classic pipeline (Gaussian blur, Sobel gradients,
4-direction non-maximum suppression, double-threshold hysteresis with
8-connectivity), pinned to exact integer arithmetic so results are
reproducible bit-for-bit across implementations:

- grayscale luma:  (299 R + 587 G + 114 B + 500) // 1000
- blur kernel:     continuous Gaussian weights quantized to 1/65536ths
  (row-major accumulation of the normalizer), output round-half-up
- gradients:       3x3 Sobel on the blurred image
- magnitude:       compared as squared values against squared thresholds
- NMS direction:   fixed-point tan(22.5 deg) * 2^15 = 13573 bin tests;
  a pixel survives when strictly greater than its first neighbor
  (west / north / north-west / north-east per bin) and >= the second
- borders:         clamp-to-edge everywhere, including morphology

Edge maps are uint8 arrays with values in {0, 255}. Thickening is 3x3
dilation applied n times; bridging is a k x k morphological closing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

EDGE_ON = 255
_TG22 = 13573  # round(tan(22.5 deg) * 2^15)
_KERNEL_SCALE = 65536

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int64)
_SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.int64)


@dataclass(frozen=True)
class CannyParams:
    gaussian_sigma: float = 1.4
    kernel_size: int = 5
    low_threshold: int = 50
    high_threshold: int = 150

    def __post_init__(self):
        if self.kernel_size < 3 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and >= 3")
        if not 0 <= self.low_threshold < self.high_threshold:
            raise ValueError("need 0 <= low_threshold < high_threshold")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be > 0")


@dataclass(frozen=True)
class FilterParams:
    thicken_iters: int = 1
    bridge_kernel: int = 5

    def __post_init__(self):
        if self.thicken_iters < 0:
            raise ValueError("thicken_iters must be >= 0")
        if self.bridge_kernel < 1 or self.bridge_kernel % 2 == 0:
            raise ValueError("bridge_kernel must be odd and >= 1")


@dataclass
class ControlVideo:
    frames: list[np.ndarray] = field(default_factory=list)
    fps: float = 5.0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("control video needs at least one frame")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ValueError(f"frame {i} shape {f.shape} != {shape}")
            check_edge_map(f)


def check_edge_map(arr: np.ndarray) -> np.ndarray:
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ValueError(f"edge map must be 2-D uint8, got {arr.dtype} {arr.shape}")
    bad = (arr != 0) & (arr != EDGE_ON)
    if bad.any():
        raise ValueError("edge map values must be 0 or 255")
    return arr


def to_gray(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma, integer rounded half up."""
    if rgb.ndim == 2:
        return rgb.astype(np.uint8)
    r = rgb[..., 0].astype(np.int64)
    g = rgb[..., 1].astype(np.int64)
    b = rgb[..., 2].astype(np.int64)
    return ((299 * r + 587 * g + 114 * b + 500) // 1000).astype(np.uint8)


def gaussian_kernel_fixed(sigma: float, size: int) -> tuple[np.ndarray, int]:
    """Integer-quantized Gaussian kernel and its exact normalizer.

    Weights are accumulated row-major in float64 before quantization, so
    any two implementations of this definition agree to the last bit.
    """
    r = size // 2
    weights = [[math.exp(-(di * di + dj * dj) / (2.0 * sigma * sigma)) for dj in range(-r, r + 1)] for di in range(-r, r + 1)]
    total = 0.0
    for row in weights:
        for w in row:
            total += w
    kernel = np.empty((size, size), dtype=np.int64)
    for i in range(size):
        for j in range(size):
            kernel[i, j] = math.floor(weights[i][j] / total * _KERNEL_SCALE + 0.5)
    return kernel, int(kernel.sum())


def _pad_edge(img: np.ndarray, r: int) -> np.ndarray:
    return np.pad(img, r, mode="edge")


def _convolve_int(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Integer correlation with clamp-to-edge padding (kernel already flipped
    where it matters; both kernels used here are symmetric or antisymmetric)."""
    k = kernel.shape[0]
    r = k // 2
    padded = _pad_edge(img.astype(np.int64), r)
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.int64)
    for di in range(k):
        for dj in range(k):
            c = int(kernel[di, dj])
            if c:
                out += c * padded[di : di + h, dj : dj + w]
    return out


def blur_fixed(gray: np.ndarray, params: CannyParams) -> np.ndarray:
    kernel, norm = gaussian_kernel_fixed(params.gaussian_sigma, params.kernel_size)
    acc = _convolve_int(gray, kernel)
    return ((2 * acc + norm) // (2 * norm)).astype(np.int64)  # round half up


def _nms(g2: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = g2.shape
    padded = _pad_edge(g2, 1)

    def shifted(dy: int, dx: int) -> np.ndarray:
        return padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    ax = np.abs(gx)
    ay = np.abs(gy)
    lhs = ay << 15
    t22 = ax * _TG22
    t67 = t22 + (ax << 16)
    horiz = lhs < t22
    vert = lhs > t67
    diag = ~(horiz | vert)
    main = diag & (gx * gy > 0)
    anti = diag & ~main

    keep = np.zeros((h, w), dtype=bool)
    keep |= horiz & (g2 > shifted(0, -1)) & (g2 >= shifted(0, 1))
    keep |= vert & (g2 > shifted(-1, 0)) & (g2 >= shifted(1, 0))
    keep |= main & (g2 > shifted(-1, -1)) & (g2 >= shifted(1, 1))
    keep |= anti & (g2 > shifted(-1, 1)) & (g2 >= shifted(1, -1))
    return keep


def canny(img: np.ndarray, params: CannyParams | None = None) -> np.ndarray:
    """Binary edge map of a grayscale (or RGB) uint8 image."""
    params = params or CannyParams()
    gray = to_gray(np.asarray(img))
    h, w = gray.shape
    if h < params.kernel_size or w < params.kernel_size:
        raise ValueError(f"image {w}x{h} smaller than kernel {params.kernel_size}")

    blurred = blur_fixed(gray, params)
    gx = _convolve_int(blurred, _SOBEL_X)
    gy = _convolve_int(blurred, _SOBEL_Y)
    g2 = gx * gx + gy * gy

    keep = _nms(g2, gx, gy)
    low2 = params.low_threshold * params.low_threshold
    high2 = params.high_threshold * params.high_threshold
    candidate = keep & (g2 >= low2)
    strong = keep & (g2 >= high2)

    # hysteresis: candidates connected (8-way) to any strong pixel survive
    labels, count = ndimage.label(candidate, structure=np.ones((3, 3), dtype=int))
    if count == 0:
        return np.zeros((h, w), dtype=np.uint8)
    strong_labels = np.unique(labels[strong])
    strong_labels = strong_labels[strong_labels != 0]
    final = np.isin(labels, strong_labels)
    return np.where(final, EDGE_ON, 0).astype(np.uint8)


# --------------------------------------------------------------------------
# morphology (neighborhoods clipped at the image border, i.e. clamp-pad)


def _dilate(mask: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = mask.shape
    padded = _pad_edge(mask, r)
    out = np.zeros((h, w), dtype=bool)
    for dy in range(k):
        for dx in range(k):
            out |= padded[dy : dy + h, dx : dx + w]
    return out


def _erode(mask: np.ndarray, k: int) -> np.ndarray:
    r = k // 2
    h, w = mask.shape
    padded = _pad_edge(mask, r)
    out = np.ones((h, w), dtype=bool)
    for dy in range(k):
        for dx in range(k):
            out &= padded[dy : dy + h, dx : dx + w]
    return out


def thicken(edge_map: np.ndarray, iters: int) -> np.ndarray:
    """Dilate with a 3x3 square element, `iters` times."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    check_edge_map(edge_map)
    mask = edge_map > 0
    for _ in range(iters):
        mask = _dilate(mask, 3)
    return np.where(mask, EDGE_ON, 0).astype(np.uint8)


def bridge(edge_map: np.ndarray, kernel: int) -> np.ndarray:
    """Morphological closing (dilate then erode) with a kernel x kernel square."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError("kernel must be odd and >= 1")
    check_edge_map(edge_map)
    if kernel == 1:
        return edge_map.copy()
    mask = _erode(_dilate(edge_map > 0, kernel), kernel)
    return np.where(mask, EDGE_ON, 0).astype(np.uint8)


def filter_edges(edge_map: np.ndarray, fparams: FilterParams | None = None) -> np.ndarray:
    fparams = fparams or FilterParams()
    return bridge(thicken(edge_map, fparams.thicken_iters), fparams.bridge_kernel)


def make_control_video(
    frames: list[np.ndarray],
    cparams: CannyParams | None = None,
    fparams: FilterParams | None = None,
    fps: float = 5.0,
) -> ControlVideo:
    """Per-frame canny -> thicken -> bridge over a uniform-size frame list."""
    if not frames:
        raise ValueError("need at least one frame")
    shape = np.asarray(frames[0]).shape[:2]
    for i, f in enumerate(frames):
        if np.asarray(f).shape[:2] != shape:
            raise ValueError(f"frame {i} size {np.asarray(f).shape[:2]} != {shape}")
    cparams = cparams or CannyParams()
    fparams = fparams or FilterParams()
    edges = [filter_edges(canny(f, cparams), fparams) for f in frames]
    return ControlVideo(frames=edges, fps=fps)
