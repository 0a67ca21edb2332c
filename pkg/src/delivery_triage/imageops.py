"""Geometric image operations: bilinear resize and training augmentations.

Images are float64 arrays (height, width, channels) in [0, 1]. Every
operation returns a fresh array and keeps values inside [0, 1]; sampling
outside the source frame fills with zero.
"""

from __future__ import annotations

import numpy as np

AUGMENT_OPS = ("hflip", "vflip", "rotate", "zoom")
ROTATE_RANGE = (-15.0, 15.0)
ZOOM_RANGE = (0.9, 1.1)


def _sample_bilinear(image: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (ys, xs) grids with bilinear weights; out-of-frame reads are 0."""
    h, w = image.shape[:2]
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]

    def grab(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        out = image[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        return out * valid[..., None]

    top = grab(y0, x0) * (1 - wx) + grab(y0, x0 + 1) * wx
    bottom = grab(y0 + 1, x0) * (1 - wx) + grab(y0 + 1, x0 + 1) * wx
    return top * (1 - wy) + bottom * wy


def resize_bilinear(image: np.ndarray, new_width: int, new_height: int) -> np.ndarray:
    """Corner-aligned bilinear resize to (new_height, new_width)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected (h, w, c) image, got shape {image.shape}")
    if new_width < 1 or new_height < 1:
        raise ValueError("target extents must be positive")
    h, w = image.shape[:2]
    ys = np.zeros(new_height) if new_height == 1 else np.arange(new_height) * (h - 1) / (new_height - 1)
    xs = np.zeros(new_width) if new_width == 1 else np.arange(new_width) * (w - 1) / (new_width - 1)
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return np.clip(_sample_bilinear(image, grid_y, grid_x), 0.0, 1.0)


def _rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    h, w = image.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    gy, gx = np.mgrid[0:h, 0:w]
    dy, dx = gy - cy, gx - cx
    # inverse mapping: rotate destination coordinates back into the source
    src_y = cy + sin * dx + cos * dy
    src_x = cx + cos * dx - sin * dy
    return np.clip(_sample_bilinear(image, src_y, src_x), 0.0, 1.0)


def _zoom(image: np.ndarray, scale: float) -> np.ndarray:
    h, w = image.shape[:2]
    if scale == 1.0:
        return image.copy()
    if scale < 1.0:
        ch = max(1, int(round(h * scale)))
        cw = max(1, int(round(w * scale)))
        y0 = (h - ch) // 2
        x0 = (w - cw) // 2
        crop = image[y0 : y0 + ch, x0 : x0 + cw]
        return resize_bilinear(crop, w, h)
    ch = int(round(h * scale))
    cw = int(round(w * scale))
    canvas = np.zeros((ch, cw, image.shape[2]), dtype=np.float64)
    y0 = (ch - h) // 2
    x0 = (cw - w) // 2
    canvas[y0 : y0 + h, x0 : x0 + w] = image
    return resize_bilinear(canvas, w, h)


def augment(
    image: np.ndarray,
    op: str,
    rng: np.random.Generator | None = None,
    angle: float | None = None,
    scale: float | None = None,
) -> np.ndarray:
    """Apply one augmentation; unset rotate/zoom parameters are drawn from rng."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"expected (h, w, c) image, got shape {image.shape}")
    if op == "hflip":
        return image[:, ::-1, :].copy()
    if op == "vflip":
        return image[::-1, :, :].copy()
    if op == "rotate":
        if angle is None:
            if rng is None:
                raise ValueError("rotate needs an explicit angle or an rng")
            angle = float(rng.uniform(*ROTATE_RANGE))
        return _rotate(image, angle)
    if op == "zoom":
        if scale is None:
            if rng is None:
                raise ValueError("zoom needs an explicit scale or an rng")
            scale = float(rng.uniform(*ZOOM_RANGE))
        if scale <= 0.0:
            raise ValueError("zoom scale must be positive")
        return _zoom(image, scale)
    raise ValueError(f"unknown augmentation {op!r}")


def random_augment(image: np.ndarray, rng: np.random.Generator, probability: float = 0.5) -> np.ndarray:
    """With the given probability apply one uniformly chosen augmentation."""
    if rng.random() >= probability:
        return image
    op = AUGMENT_OPS[int(rng.integers(0, len(AUGMENT_OPS)))]
    return augment(image, op, rng=rng)
