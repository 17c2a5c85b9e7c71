"""Feature extraction: a dilated-convolution pyramid over image + energy, and
point-wise feature assembly for contour vertices and box grids.

The feature map is fixed at 128x128x64 (three parallel 3x3 branches with
dilations 1/2/4 emitting 16 + 24 + 24 channels, linear output, zero padding).
Every point feature is the 64 sampled channels plus the point's box-relative
coordinates, so the downstream heads see translation-free geometry.
"""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .geometry import BBox

__all__ = [
    "PYRAMID_BRANCHES",
    "FEATURE_CHANNELS",
    "POINT_FEATURE_DIM",
    "init_pyramid_params",
    "pyramid_extract",
    "bilinear_feature",
    "point_feature",
    "grid_features",
    "grid_points",
]

PYRAMID_BRANCHES = ((1, 16), (2, 24), (4, 24))  # (dilation, channels)
FEATURE_CHANNELS = 64
POINT_FEATURE_DIM = 66


def init_pyramid_params(params: ParamStore, rng: np.random.Generator) -> None:
    for dilation, cout in PYRAMID_BRANCHES:
        params.add(
            f"pyramid.d{dilation}.w",
            rng.normal(scale=1.0 / np.sqrt(9 * 2), size=(3, 3, 2, cout)),
        )
        params.add(f"pyramid.d{dilation}.b", np.zeros(cout))


def pyramid_extract(image: np.ndarray, energy: np.ndarray, params: ParamStore) -> Tensor:
    """Stack image and energy (both scaled to [0, 1]) and run the three
    dilated branches; returns the (128, 128, 64) feature Tensor."""
    img = np.asarray(image, dtype=np.float64)
    eng = np.asarray(energy, dtype=np.float64)
    if img.shape != (128, 128) or eng.shape != (128, 128):
        raise ValueError(f"pyramid expects 128x128 inputs, got {img.shape} and {eng.shape}")
    stacked = Tensor(np.stack([img / 255.0, eng / 255.0], axis=2))
    branches = []
    for dilation, _ in PYRAMID_BRANCHES:
        w = params[f"pyramid.d{dilation}.w"]
        b = params[f"pyramid.d{dilation}.b"]
        branches.append(dc.conv2d(stacked, w, dilation=dilation) + b)
    return dc.concat(branches, axis=2)


def bilinear_feature(fmap: Tensor, point) -> Tensor:
    """Sample the 64-channel vector at one (x, y) point."""
    pts = point if isinstance(point, Tensor) else Tensor(np.asarray(point, dtype=np.float64))
    if pts.data.ndim == 1:
        pts = dc.reshape(pts, (1, 2))
    return dc.reshape(dc.bilinear_sample(fmap, pts), (fmap.shape[2],))


def _rel_coords(points: Tensor, box: BBox) -> Tensor:
    center = Tensor(np.array([[box.cx, box.cy]]))
    extent = Tensor(np.array([[box.w, box.h]]))
    return (points - center) / extent


def point_feature(fmap: Tensor, point, box: BBox) -> Tensor:
    """64 sampled channels + ((x-cx)/w, (y-cy)/h) for one point."""
    pts = point if isinstance(point, Tensor) else Tensor(np.asarray(point, dtype=np.float64))
    if pts.data.ndim == 1:
        pts = dc.reshape(pts, (1, 2))
    feats = point_features(fmap, pts, box)
    return dc.reshape(feats, (POINT_FEATURE_DIM,))


def point_features(fmap: Tensor, points: Tensor, box: BBox) -> Tensor:
    """Vectorized point_feature for (P, 2) points; returns (P, 66)."""
    sampled = dc.bilinear_sample(fmap, points)
    return dc.concat([sampled, _rel_coords(points, box)], axis=1)


def grid_points(box: BBox, m: int) -> np.ndarray:
    """Centers of an m x m partition of the box, row-major."""
    xs = box.cx - box.w / 2 + (np.arange(m) + 0.5) * (box.w / m)
    ys = box.cy - box.h / 2 + (np.arange(m) + 0.5) * (box.h / m)
    gx, gy = np.meshgrid(xs, ys)  # row-major: y varies over rows
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def grid_features(fmap: Tensor, box: BBox, m: int) -> Tensor:
    """Point features at the m^2 grid centers, row-major; returns (m^2, 66)."""
    if m < 2:
        raise ValueError(f"grid needs m >= 2, got {m}")
    return point_features(fmap, Tensor(grid_points(box, m)), box)
