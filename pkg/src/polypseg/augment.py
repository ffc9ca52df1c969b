"""Geometric augmentations over (image, mask) pairs.

Flips and rot90 are exact index permutations. The three warps build an
inverse coordinate map per output pixel and resample the image bilinearly
and the mask by nearest neighbor (so it stays binary), with clamp-to-edge
beyond the border. Every op appends its name to the sample's trail.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError
from .synth import Sample

AUGMENT_OPS = ("hflip", "vflip", "rot90", "shift_scale_rotate",
               "grid_distortion", "elastic")


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (C, H, W) at float coordinates (ys, xs), edge-clamped."""
    h, w = img.shape[1], img.shape[2]
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0).astype(img.dtype)
    fx = (xs - x0).astype(img.dtype)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    v00 = img[:, y0c, x0c]
    v01 = img[:, y0c, x1c]
    v10 = img[:, y1c, x0c]
    v11 = img[:, y1c, x1c]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return (top * (1.0 - fy) + bot * fy).astype(img.dtype)


def _nearest_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[1], img.shape[2]
    yn = np.clip(np.rint(ys).astype(np.int64), 0, h - 1)
    xn = np.clip(np.rint(xs).astype(np.int64), 0, w - 1)
    return img[:, yn, xn]


def _warped(sample: Sample, ys, xs, op: str) -> Sample:
    return Sample(
        image=_bilinear_sample(sample.image, ys, xs),
        mask=_nearest_sample(sample.mask, ys, xs),
        sample_id=sample.sample_id,
        seed=sample.seed,
        augmentation_trail=sample.augmentation_trail + [op],
    )


def _permuted(sample: Sample, fn, op: str) -> Sample:
    return Sample(
        image=np.ascontiguousarray(fn(sample.image)),
        mask=np.ascontiguousarray(fn(sample.mask)),
        sample_id=sample.sample_id,
        seed=sample.seed,
        augmentation_trail=sample.augmentation_trail + [op],
    )


def _shift_scale_rotate(sample: Sample, rng: np.random.Generator,
                        max_shift=0.10, scale_range=(0.9, 1.1), max_angle=30.0) -> Sample:
    h, w = sample.image.shape[1], sample.image.shape[2]
    angle = np.deg2rad(rng.uniform(-max_angle, max_angle))
    scale = rng.uniform(*scale_range)
    ty = rng.uniform(-max_shift, max_shift) * h
    tx = rng.uniform(-max_shift, max_shift) * w
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # invert dst = R(angle) * scale * (src - c) + c + t
    dy = yy - cy - ty
    dx = xx - cx - tx
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    ys = (sin_a * dx + cos_a * dy) / scale + cy
    xs = (cos_a * dx - sin_a * dy) / scale + cx
    return _warped(sample, ys, xs, "shift_scale_rotate")


def _node_weights(n_pix: int, n_nodes: int) -> np.ndarray:
    """(n_pix, n_nodes) hat-function weights for piecewise-linear interpolation
    of node values placed evenly over [0, n_pix - 1]."""
    w = np.zeros((n_pix, n_nodes))
    step = (n_pix - 1) / (n_nodes - 1)
    for p in range(n_pix):
        u = p / step
        i = min(int(np.floor(u)), n_nodes - 2)
        f = u - i
        w[p, i] = 1.0 - f
        w[p, i + 1] = f
    return w


def _grid_distortion(sample: Sample, rng: np.random.Generator,
                     cells: int = 4, max_jitter: float = 0.10) -> Sample:
    h, w = sample.image.shape[1], sample.image.shape[2]
    nodes = cells + 1
    limit_y = max_jitter * (h / cells)
    limit_x = max_jitter * (w / cells)
    node_dy = rng.uniform(-limit_y, limit_y, size=(nodes, nodes))
    node_dx = rng.uniform(-limit_x, limit_x, size=(nodes, nodes))
    # anchor the border nodes so the warp never pulls from far outside
    for arr in (node_dy, node_dx):
        arr[0, :] = arr[-1, :] = 0.0
        arr[:, 0] = arr[:, -1] = 0.0
    wy = _node_weights(h, nodes)
    wx = _node_weights(w, nodes)
    dy = wy @ node_dy @ wx.T
    dx = wy @ node_dx @ wx.T
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _warped(sample, yy + dy, xx + dx, "grid_distortion")


def _elastic(sample: Sample, rng: np.random.Generator,
             sigma: float = 6.0, magnitude: float = 8.0) -> Sample:
    if sigma <= 0 or magnitude < 0:
        raise ConfigError(f"elastic needs sigma > 0 and magnitude >= 0, got {sigma}, {magnitude}")
    h, w = sample.image.shape[1], sample.image.shape[2]
    dy = gaussian_filter(rng.uniform(-1.0, 1.0, size=(h, w)), sigma, mode="reflect")
    dx = gaussian_filter(rng.uniform(-1.0, 1.0, size=(h, w)), sigma, mode="reflect")
    peak = max(np.abs(dy).max(), np.abs(dx).max(), 1e-12)
    dy *= magnitude / peak
    dx *= magnitude / peak
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return _warped(sample, yy + dy, xx + dx, "elastic")


def augment(sample: Sample, op: str, rng: np.random.Generator, **params) -> Sample:
    """Apply one named augmentation; returns a new Sample with the op
    appended to its trail. Unknown names raise ConfigError."""
    if op == "hflip":
        return _permuted(sample, lambda a: a[:, :, ::-1], op)
    if op == "vflip":
        return _permuted(sample, lambda a: a[:, ::-1, :], op)
    if op == "rot90":
        return _permuted(sample, lambda a: np.rot90(a, k=1, axes=(1, 2)), op)
    if op == "shift_scale_rotate":
        return _shift_scale_rotate(sample, rng, **params)
    if op == "grid_distortion":
        return _grid_distortion(sample, rng, **params)
    if op == "elastic":
        return _elastic(sample, rng, **params)
    raise ConfigError(f"unknown augmentation {op!r}; choose from {AUGMENT_OPS}")
