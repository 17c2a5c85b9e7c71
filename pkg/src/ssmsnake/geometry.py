"""Closed-polygon contours: resampling, curvature, pairing, rasterization.

All functions are pure and operate on float64 pixel coordinates with x to the
right and y down. Contours are counter-clockwise in the shoelace sense
(positive signed area).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Contour",
    "BBox",
    "CurvatureProfile",
    "resample_uniform",
    "resample_curvature_weighted",
    "discrete_curvature",
    "align_to_gt",
    "rasterize",
    "init_polygon_from_box",
    "polygon_area",
]

_DUP_EPS = 1e-9


def polygon_area(points: np.ndarray) -> float:
    """Signed shoelace area of a closed polygon given as (N, 2) vertices."""
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


@dataclass(frozen=True)
class Contour:
    """Ordered closed polygon of N vertices, stored (N, 2) as (x, y)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ValueError(f"contour needs at least 3 (x, y) vertices, got shape {pts.shape}")
        seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        if np.any(seg <= _DUP_EPS):
            raise ValueError("consecutive duplicate vertices in contour")
        if polygon_area(pts) < 0:
            pts = pts[::-1]
        object.__setattr__(self, "points", np.ascontiguousarray(pts))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def perimeter(self) -> float:
        return float(np.linalg.norm(np.roll(self.points, -1, axis=0) - self.points, axis=1).sum())

    def bbox(self) -> "BBox":
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return BBox(0, *(0.5 * (lo + hi)), *(hi - lo))


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: class id plus center and extent in pixels."""

    class_id: int
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box extent must be positive, got w={self.w} h={self.h}")

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h])


@dataclass(frozen=True)
class CurvatureProfile:
    """Per-vertex curvature (1/pixels) and the squared-curvature weight."""

    kappa: np.ndarray
    weight: np.ndarray = field(init=False)

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=np.float64)
        if not np.all(np.isfinite(k)):
            raise ValueError("non-finite curvature")
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "weight", k * k)


def _arclength_table(pts: np.ndarray) -> tuple[np.ndarray, float]:
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return cum, cum[-1]


def _sample_at(pts: np.ndarray, cum: np.ndarray, targets: np.ndarray) -> np.ndarray:
    total = cum[-1]
    t = np.mod(targets, total)
    idx = np.clip(np.searchsorted(cum, t, side="right") - 1, 0, len(pts) - 1)
    seg_len = cum[idx + 1] - cum[idx]
    frac = np.where(seg_len > 0, (t - cum[idx]) / np.where(seg_len > 0, seg_len, 1.0), 0.0)
    nxt = (idx + 1) % len(pts)
    return pts[idx] + frac[:, None] * (pts[nxt] - pts[idx])


def resample_uniform(contour: Contour, n: int) -> Contour:
    """Place n points at equal arc length, starting at the arc-length origin."""
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    pts = contour.points
    cum, total = _arclength_table(pts)
    if total <= _DUP_EPS:
        raise ValueError("degenerate zero-perimeter contour")
    targets = np.arange(n) * (total / n)
    return Contour(_sample_at(pts, cum, targets))


def discrete_curvature(contour: Contour) -> CurvatureProfile:
    """Turning angle at each vertex divided by the mean adjacent segment length."""
    pts = contour.points
    prev = pts - np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0) - pts
    cross = prev[:, 0] * nxt[:, 1] - prev[:, 1] * nxt[:, 0]
    dot = (prev * nxt).sum(axis=1)
    angle = np.arctan2(cross, dot)
    mean_len = 0.5 * (np.linalg.norm(prev, axis=1) + np.linalg.norm(nxt, axis=1))
    return CurvatureProfile(angle / mean_len)


def resample_curvature_weighted(contour: Contour, n: int, beta: float = 4.0) -> Contour:
    """Resample with density proportional to 1 + beta * (kappa / max|kappa|)^2.

    Falls back to uniform spacing when curvature is constant or beta is zero.
    The first output point stays at the arc-length origin.
    """
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    pts = contour.points
    cum, total = _arclength_table(pts)
    if total <= _DUP_EPS:
        raise ValueError("degenerate zero-perimeter contour")
    kappa = discrete_curvature(contour).kappa
    peak = np.max(np.abs(kappa))
    if beta <= 0.0 or peak <= 0.0:
        return resample_uniform(contour, n)
    w = (kappa / peak) ** 2
    seg_w = 1.0 + beta * 0.5 * (w + np.roll(w, -1))
    seg_len = np.diff(cum)
    mass = np.concatenate([[0.0], np.cumsum(seg_w * seg_len)])
    targets = np.arange(n) * (mass[-1] / n)
    idx = np.clip(np.searchsorted(mass, targets, side="right") - 1, 0, len(pts) - 1)
    seg_mass = mass[idx + 1] - mass[idx]
    frac = np.where(seg_mass > 0, (targets - mass[idx]) / np.where(seg_mass > 0, seg_mass, 1.0), 0.0)
    arc = cum[idx] + frac * seg_len[idx]
    return Contour(_sample_at(pts, cum, arc))


def align_to_gt(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, int, bool, float]:
    """Cyclically shift (and possibly reverse) gt to best match pred pointwise.

    Minimizes the summed Euclidean distance over all N shifts x 2 orientations;
    ties prefer the smallest shift and forward orientation. Returns
    (aligned gt points, shift, reversed flag, cost).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"align_to_gt: shapes differ {pred.shape} vs {gt.shape}")
    n = len(pred)
    rows = np.arange(n)
    best = (np.inf, 0, False)
    for reverse in (False, True):
        cand = gt[::-1] if reverse else gt
        # candidate k pairs pred_i with cand_{(i+k) mod n}
        idx = (rows[None, :] + rows[:, None]) % n  # (shift, i)
        costs = np.linalg.norm(cand[idx] - pred[None, :, :], axis=2).sum(axis=1)
        k = int(np.argmin(costs))
        if costs[k] < best[0]:
            best = (float(costs[k]), k, reverse)
    cost, k, reverse = best
    cand = gt[::-1] if reverse else gt
    return np.roll(cand, -k, axis=0), k, reverse, cost


def rasterize(contour: Contour | np.ndarray, height: int, width: int) -> np.ndarray:
    """Binary mask: pixel (i, j) set iff its center (j+0.5, i+0.5) is inside
    the polygon under the nonzero winding rule."""
    pts = contour.points if isinstance(contour, Contour) else np.asarray(contour, dtype=np.float64)
    pts = np.clip(pts, [-float(width), -float(height)], [2.0 * width, 2.0 * height])
    mask = np.zeros((height, width), dtype=bool)
    lo = np.floor(pts.min(axis=0) - 0.5).astype(int)
    hi = np.ceil(pts.max(axis=0) + 0.5).astype(int)
    x0, y0 = max(lo[0], 0), max(lo[1], 0)
    x1, y1 = min(hi[0] + 1, width), min(hi[1] + 1, height)
    if x0 >= x1 or y0 >= y1:
        return mask
    cx = np.arange(x0, x1) + 0.5
    cy = np.arange(y0, y1) + 0.5
    px = np.broadcast_to(cx[None, :], (y1 - y0, x1 - x0))
    py = np.broadcast_to(cy[:, None], (y1 - y0, x1 - x0))
    wn = np.zeros(px.shape, dtype=np.int64)
    nxt = np.roll(pts, -1, axis=0)
    for (ax, ay), (bx, by) in zip(pts, nxt):
        # Sunday winding: count signed upward/downward crossings left of the point
        is_left = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
        up = (ay <= py) & (by > py) & (is_left > 0)
        down = (ay > py) & (by <= py) & (is_left < 0)
        wn += up.astype(np.int64) - down.astype(np.int64)
    mask[y0:y1, x0:x1] = wn != 0
    return mask


def init_polygon_from_box(box: BBox, n_init: int = 40) -> Contour:
    """Initial polygon on the ellipse inscribed in the box, starting at the
    rightmost point (angle 0) and walking counter-clockwise."""
    theta = 2.0 * np.pi * np.arange(n_init) / n_init
    pts = np.stack(
        [box.cx + 0.5 * box.w * np.cos(theta), box.cy + 0.5 * box.h * np.sin(theta)], axis=1
    )
    return Contour(pts)
