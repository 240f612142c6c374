"""Brute-force reference implementation of the pinned edge pipeline.

Written independently of the package's vectorized detector: everything is
per-pixel Python loops over the same documented integer algorithm
(quantized Gaussian, Sobel, squared-magnitude thresholds, fixed-point
direction bins, clamp-to-edge borders, BFS hysteresis). Used as the oracle
for exact binary equality tests.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

TG22 = 13573  # round(tan(22.5 deg) * 2^15)
KERNEL_SCALE = 65536


def ref_gray(rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim == 2:
        return [[int(v) for v in row] for row in rgb]
    h, w = rgb.shape[:2]
    out = [[0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            r, g, b = int(rgb[y, x, 0]), int(rgb[y, x, 1]), int(rgb[y, x, 2])
            out[y][x] = (299 * r + 587 * g + 114 * b + 500) // 1000
    return out


def ref_kernel(sigma, size):
    r = size // 2
    weights = [
        [math.exp(-(di * di + dj * dj) / (2.0 * sigma * sigma)) for dj in range(-r, r + 1)]
        for di in range(-r, r + 1)
    ]
    total = 0.0
    for row in weights:
        for w in row:
            total += w
    kernel = [[math.floor(w / total * KERNEL_SCALE + 0.5) for w in row] for row in weights]
    norm = sum(sum(row) for row in kernel)
    return kernel, norm


def _clamp(v, lo, hi):
    return lo if v < lo else (hi if v > hi else v)


def ref_convolve(img, kernel):
    h = len(img)
    w = len(img[0])
    k = len(kernel)
    r = k // 2
    out = [[0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            acc = 0
            for di in range(k):
                for dj in range(k):
                    yy = _clamp(y + di - r, 0, h - 1)
                    xx = _clamp(x + dj - r, 0, w - 1)
                    acc += kernel[di][dj] * img[yy][xx]
            out[y][x] = acc
    return out


def ref_blur(gray, sigma, size):
    kernel, norm = ref_kernel(sigma, size)
    acc = ref_convolve(gray, kernel)
    h = len(gray)
    w = len(gray[0])
    return [[(2 * acc[y][x] + norm) // (2 * norm) for x in range(w)] for y in range(h)]


SOBEL_X = [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]
SOBEL_Y = [[-1, -2, -1], [0, 0, 0], [1, 2, 1]]


def ref_canny(img, sigma=1.4, kernel_size=5, low=50, high=150):
    gray = ref_gray(img)
    h = len(gray)
    w = len(gray[0])
    blurred = ref_blur(gray, sigma, kernel_size)
    gx = ref_convolve(blurred, SOBEL_X)
    gy = ref_convolve(blurred, SOBEL_Y)
    g2 = [[gx[y][x] * gx[y][x] + gy[y][x] * gy[y][x] for x in range(w)] for y in range(h)]

    def at(y, x):
        return g2[_clamp(y, 0, h - 1)][_clamp(x, 0, w - 1)]

    keep = [[False] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            if g2[y][x] == 0:
                continue
            ax = abs(gx[y][x])
            ay = abs(gy[y][x])
            lhs = ay << 15
            t22 = ax * TG22
            t67 = t22 + (ax << 16)
            if lhs < t22:
                n1, n2 = at(y, x - 1), at(y, x + 1)
            elif lhs > t67:
                n1, n2 = at(y - 1, x), at(y + 1, x)
            elif gx[y][x] * gy[y][x] > 0:
                n1, n2 = at(y - 1, x - 1), at(y + 1, x + 1)
            else:
                n1, n2 = at(y - 1, x + 1), at(y + 1, x - 1)
            if g2[y][x] > n1 and g2[y][x] >= n2:
                keep[y][x] = True

    low2 = low * low
    high2 = high * high
    candidate = [[keep[y][x] and g2[y][x] >= low2 for x in range(w)] for y in range(h)]
    strong = [[keep[y][x] and g2[y][x] >= high2 for x in range(w)] for y in range(h)]

    # hysteresis: BFS from strong pixels through candidates, 8-connected
    final = [[False] * w for _ in range(h)]
    queue = deque()
    for y in range(h):
        for x in range(w):
            if strong[y][x]:
                final[y][x] = True
                queue.append((y, x))
    while queue:
        y, x = queue.popleft()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w and candidate[yy][xx] and not final[yy][xx]:
                    final[yy][xx] = True
                    queue.append((yy, xx))
    return np.array([[255 if final[y][x] else 0 for x in range(w)] for y in range(h)], dtype=np.uint8)


def ref_dilate(mask, k):
    h, w = mask.shape
    r = k // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            v = False
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if mask[_clamp(y + dy, 0, h - 1)][_clamp(x + dx, 0, w - 1)]:
                        v = True
            out[y][x] = v
    return out


def ref_erode(mask, k):
    h, w = mask.shape
    r = k // 2
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            v = True
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    if not mask[_clamp(y + dy, 0, h - 1)][_clamp(x + dx, 0, w - 1)]:
                        v = False
            out[y][x] = v
    return out


def ref_close(edge_map, k):
    mask = np.asarray(edge_map) > 0
    return np.where(ref_erode(ref_dilate(mask, k), k), 255, 0).astype(np.uint8)
