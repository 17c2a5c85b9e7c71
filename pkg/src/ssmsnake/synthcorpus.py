"""Deterministic synthetic scene generator and the box-perturbation sampler.

Scenes are 128x128 grayscale images containing 2-5 non-overlapping instances
from three shape families (ellipse, rounded rectangle, star), with optional
touching pairs, boundary blur and additive noise. Every random draw comes from
the scene's own seed, so (config, seed) fully determines the output bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import BBox, Contour, rasterize, resample_curvature_weighted, resample_uniform
from .pgm import read_pgm, write_pgm

__all__ = [
    "GeneratorConfig",
    "Instance",
    "Scene",
    "PerturbSpec",
    "generate",
    "perturb_boxes",
    "save_scene",
    "load_scene",
    "scene_equal",
]

IMAGE_SIZE = 128
N_VERTICES = 128
CLASS_NAMES = ("ellipse", "rounded_rect", "star")
_RETRY_STRIDE = 1000003  # sub-seed increment after a failed placement


@dataclass(frozen=True)
class GeneratorConfig:
    count_range: tuple[int, int] = (2, 5)
    major_range: tuple[float, float] = (8.0, 48.0)
    small_prob: float = 0.2
    small_max: float = 12.0
    star_spikes: tuple[int, int] = (5, 8)
    spike_depth: tuple[float, float] = (0.3, 0.6)
    touch_prob: float = 0.3
    blur_range: tuple[float, float] = (0.0, 2.0)
    noise_range: tuple[float, float] = (0.0, 8.0)
    min_contrast: float = 16.0

    def __post_init__(self):
        if self.count_range[0] < 1 or self.count_range[0] > self.count_range[1]:
            raise ValueError(f"bad instance count range {self.count_range}")
        for p in (self.small_prob, self.touch_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")
        if self.major_range[0] < 4 or self.major_range[0] > self.major_range[1]:
            raise ValueError(f"bad major-axis range {self.major_range}")


@dataclass(frozen=True)
class Instance:
    class_id: int
    polygon: Contour
    bbox: BBox


@dataclass
class Scene:
    image: np.ndarray  # uint8, (128, 128)
    instances: list[Instance]
    seed: int
    _mask_cache: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    def instance_masks(self) -> list[np.ndarray]:
        if self._mask_cache is None:
            self._mask_cache = [rasterize(inst.polygon, *self.image.shape) for inst in self.instances]
        return self._mask_cache


@dataclass(frozen=True)
class PerturbSpec:
    shift: float = 0.0
    scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.shift <= 0.5 and 0.0 <= self.scale <= 0.5):
            raise ValueError(f"perturbation fractions must lie in [0, 0.5]")


def _quantize(values: np.ndarray) -> np.ndarray:
    """Snap to the 6-decimal grid used by the JSON files, so a round trip
    through disk reproduces the floats bit-exactly."""
    return np.asarray([[float(f"{v:.6f}") for v in row] for row in np.atleast_2d(values)])


def _ellipse_outline(major: float, rng: np.random.Generator) -> np.ndarray:
    a = major / 2.0
    b = a * rng.uniform(0.5, 1.0)
    t = 2 * np.pi * np.arange(512) / 512
    return np.stack([a * np.cos(t), b * np.sin(t)], axis=1)


def _rounded_rect_outline(major: float, rng: np.random.Generator) -> np.ndarray:
    hw = major / 2.0
    hh = hw * rng.uniform(0.5, 1.0)
    r = 0.3 * min(hw, hh)
    pieces = []
    arc = np.linspace(0, np.pi / 2, 24, endpoint=False)
    pieces.append(np.stack([np.full(32, hw), np.linspace(-(hh - r), hh - r, 32, endpoint=False)], axis=1))
    pieces.append(np.stack([hw - r + r * np.cos(arc), hh - r + r * np.sin(arc)], axis=1))
    pieces.append(np.stack([np.linspace(hw - r, -(hw - r), 32, endpoint=False), np.full(32, hh)], axis=1))
    pieces.append(np.stack([-(hw - r) + r * np.cos(arc + np.pi / 2), hh - r + r * np.sin(arc + np.pi / 2)], axis=1))
    pieces.append(np.stack([np.full(32, -hw), np.linspace(hh - r, -(hh - r), 32, endpoint=False)], axis=1))
    pieces.append(np.stack([-(hw - r) + r * np.cos(arc + np.pi), -(hh - r) + r * np.sin(arc + np.pi)], axis=1))
    pieces.append(np.stack([np.linspace(-(hw - r), hw - r, 32, endpoint=False), np.full(32, -hh)], axis=1))
    pieces.append(np.stack([hw - r + r * np.cos(arc + 1.5 * np.pi), -(hh - r) + r * np.sin(arc + 1.5 * np.pi)], axis=1))
    return np.concatenate(pieces, axis=0)


def _star_outline(major: float, rng: np.random.Generator) -> np.ndarray:
    spikes = int(rng.integers(5, 9))
    depth = rng.uniform(0.3, 0.6)
    r_out = major / 2.0
    r_in = r_out * (1.0 - depth)
    t = np.pi * np.arange(2 * spikes) / spikes
    radii = np.where(np.arange(2 * spikes) % 2 == 0, r_out, r_in)
    corners = np.stack([radii * np.cos(t), radii * np.sin(t)], axis=1)
    return resample_uniform(Contour(corners), 512).points


_OUTLINES = (_ellipse_outline, _rounded_rect_outline, _star_outline)


def _build_shape(cfg: GeneratorConfig, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    class_id = int(rng.integers(0, 3))
    if rng.uniform() < cfg.small_prob:
        major = rng.uniform(cfg.major_range[0], min(cfg.small_max, cfg.major_range[1]))
    else:
        major = rng.uniform(max(cfg.major_range[0], cfg.small_max), cfg.major_range[1])
    outline = _OUTLINES[class_id](major, rng)
    angle = rng.uniform(0, 2 * np.pi)
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    return class_id, outline @ rot.T


def _finalize_polygon(outline: np.ndarray, center: np.ndarray) -> Contour:
    dense = Contour(outline + center[None, :])
    poly = resample_curvature_weighted(dense, N_VERTICES, beta=4.0)
    return Contour(_quantize(poly.points))


def _adjacent(a: np.ndarray, b: np.ndarray) -> bool:
    return bool((ndimage.binary_dilation(a, np.ones((3, 3))) & b).any())


def _coverage(poly: Contour, mask: np.ndarray, factor: int = 4) -> np.ndarray:
    """Center-weighted anti-aliased fill: 1/3 supersampled area coverage plus
    2/3 pixel-center membership. Edge pixels take intermediate values while
    the thresholded support stays exactly the rasterized mask."""
    big = rasterize(poly.points * factor, IMAGE_SIZE * factor, IMAGE_SIZE * factor)
    area = big.reshape(IMAGE_SIZE, factor, IMAGE_SIZE, factor).mean(axis=(1, 3))
    return (area + 2.0 * mask) / 3.0


def _try_generate(cfg: GeneratorConfig, rng: np.random.Generator) -> list[Instance] | None:
    n_inst = int(rng.integers(cfg.count_range[0], cfg.count_range[1] + 1))
    instances: list[Instance] = []
    masks: list[np.ndarray] = []
    union = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=bool)
    for k in range(n_inst):
        placed = False
        for _ in range(100):
            class_id, outline = _build_shape(cfg, rng)
            ext = outline.max(axis=0) - outline.min(axis=0)
            half = 0.5 * ext
            lo = half + 1.5
            hi = IMAGE_SIZE - 1.5 - half
            if np.any(lo >= hi):
                continue
            touching = k > 0 and rng.uniform() < cfg.touch_prob
            if touching:
                anchor_i = int(rng.integers(0, len(instances)))
                theta = rng.uniform(0, 2 * np.pi)
                result = _slide_into_contact(outline, instances[anchor_i], masks[anchor_i], union, theta, lo, hi)
                if result is None:
                    continue
                poly, mask = result
            else:
                center = rng.uniform(lo, hi)
                poly = _finalize_polygon(outline, center)
                mask = rasterize(poly, IMAGE_SIZE, IMAGE_SIZE)
                if mask.sum() < 4 or (mask & union).any():
                    continue
            instances.append(Instance(class_id, poly, _tight_bbox(class_id, poly)))
            masks.append(mask)
            union |= mask
            placed = True
            break
        if not placed:
            return None
    return instances, masks


def _tight_bbox(class_id: int, poly: Contour) -> BBox:
    lo = poly.points.min(axis=0)
    hi = poly.points.max(axis=0)
    q = _quantize(np.array([0.5 * (lo + hi), hi - lo]))
    return BBox(class_id, q[0][0], q[0][1], q[1][0], q[1][1])


def _slide_into_contact(outline, anchor: Instance, anchor_mask, union, theta, lo, hi):
    direction = np.array([np.cos(theta), np.sin(theta)])
    a_center = np.array([anchor.bbox.cx, anchor.bbox.cy])
    a_r = 0.5 * np.hypot(anchor.bbox.w, anchor.bbox.h)
    c_r = 0.5 * float(np.hypot(*(outline.max(axis=0) - outline.min(axis=0))))
    start = a_r + c_r + 2.0
    prev = None
    dist = start
    while dist > 0.5:
        center = a_center + direction * dist
        if np.any(center < lo) or np.any(center > hi):
            return None
        poly = _finalize_polygon(outline, center)
        mask = rasterize(poly, IMAGE_SIZE, IMAGE_SIZE)
        if (mask & union).any():
            break
        prev = (poly, mask)
        dist -= 1.0
    if prev is None:
        return None
    poly, mask = prev
    if mask.sum() < 4 or not _adjacent(mask, anchor_mask):
        return None
    return poly, mask


def generate(config: GeneratorConfig, seed: int) -> Scene:
    """Deterministic scene from (config, seed); placement failures restart
    from an incremented sub-seed, which the scene records."""
    sub_seed = seed
    while True:
        rng = np.random.default_rng(sub_seed)
        result = _try_generate(config, rng)
        if result is not None:
            instances, masks = result
            break
        sub_seed += _RETRY_STRIDE
    background = rng.uniform(40.0, 215.0)
    image = np.full((IMAGE_SIZE, IMAGE_SIZE), background)
    for inst, mask in zip(instances, masks):
        sign = 1.0 if rng.uniform() < 0.5 else -1.0
        contrast = config.min_contrast + rng.uniform(0.0, 60.0)
        intensity = float(np.clip(background + sign * contrast, 4.0, 251.0))
        if abs(intensity - background) < config.min_contrast:
            intensity = float(np.clip(background - sign * contrast, 4.0, 251.0))
        image += _coverage(inst.polygon, mask) * (intensity - background)
    blur = rng.uniform(*config.blur_range)
    if blur > 0:
        image = ndimage.gaussian_filter(image, blur, mode="nearest")
    noise = rng.uniform(*config.noise_range)
    if noise > 0:
        image += rng.normal(0.0, noise, size=image.shape)
    image = np.clip(np.rint(image), 0, 255).astype(np.uint8)
    return Scene(image=image, instances=instances, seed=sub_seed, _mask_cache=masks)


def perturb_boxes(scene: Scene, spec: PerturbSpec) -> list[BBox]:
    """Displace each box center by up to +-shift * extent and scale each
    dimension by a factor from {1 - scale, 1 + scale}, clipped to the image."""
    rng = np.random.default_rng(spec.seed)
    out = []
    size = float(scene.image.shape[0])
    for inst in scene.instances:
        b = inst.bbox
        dx = rng.uniform(-spec.shift, spec.shift) * b.w
        dy = rng.uniform(-spec.shift, spec.shift) * b.h
        fw = 1.0 + spec.scale * (1.0 if rng.uniform() < 0.5 else -1.0)
        fh = 1.0 + spec.scale * (1.0 if rng.uniform() < 0.5 else -1.0)
        cx, cy = b.cx + dx, b.cy + dy
        w, h = b.w * fw, b.h * fh
        if cx - w / 2 < 0.0 or cx + w / 2 > size:
            x0 = max(cx - w / 2, 0.0)
            x1 = min(cx + w / 2, size)
            if x1 - x0 < 2.0:
                x0, x1 = max(min(cx - 1, size - 2), 0.0), min(max(cx + 1, 2.0), size)
            cx, w = 0.5 * (x0 + x1), x1 - x0
        if cy - h / 2 < 0.0 or cy + h / 2 > size:
            y0 = max(cy - h / 2, 0.0)
            y1 = min(cy + h / 2, size)
            if y1 - y0 < 2.0:
                y0, y1 = max(min(cy - 1, size - 2), 0.0), min(max(cy + 1, 2.0), size)
            cy, h = 0.5 * (y0 + y1), y1 - y0
        out.append(BBox(b.class_id, cx, cy, w, h))
    return out


def save_scene(scene: Scene, stem: Path | str) -> None:
    """Write <stem>.pgm (image) and <stem>.json (annotations)."""
    stem = Path(stem)
    write_pgm(stem.with_suffix(".pgm"), scene.image)
    lines = ["{", f'  "seed": {scene.seed},', '  "instances": [']
    chunks = []
    for inst in scene.instances:
        b = inst.bbox
        poly = ", ".join(f"[{x:.6f}, {y:.6f}]" for x, y in inst.polygon.points)
        chunks.append(
            "    {"
            + f'"class": {inst.class_id}, '
            + f'"bbox": [{b.cx:.6f}, {b.cy:.6f}, {b.w:.6f}, {b.h:.6f}], '
            + f'"polygon": [{poly}]'
            + "}"
        )
    lines.append(",\n".join(chunks))
    lines.append("  ]")
    lines.append("}")
    stem.with_suffix(".json").write_text("\n".join(lines) + "\n", encoding="ascii")


def load_scene(stem: Path | str) -> Scene:
    stem = Path(stem)
    image = read_pgm(stem.with_suffix(".pgm"))
    raw = stem.with_suffix(".json").read_text(encoding="ascii")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ValueError(f"{stem.with_suffix('.json')}: malformed JSON at line {e.lineno} column {e.colno}") from e
    for key in ("seed", "instances"):
        if key not in doc:
            raise ValueError(f"{stem.with_suffix('.json')}: missing required key {key!r}")
    instances = []
    for i, entry in enumerate(doc["instances"]):
        for key in ("class", "bbox", "polygon"):
            if key not in entry:
                raise ValueError(f"{stem.with_suffix('.json')}: instance {i} missing key {key!r}")
        poly = Contour(np.asarray(entry["polygon"], dtype=np.float64))
        bbox = BBox(int(entry["class"]), *(float(v) for v in entry["bbox"]))
        instances.append(Instance(int(entry["class"]), poly, bbox))
    return Scene(image=image, instances=instances, seed=int(doc["seed"]))


def scene_equal(a: Scene, b: Scene) -> bool:
    if a.seed != b.seed or len(a.instances) != len(b.instances):
        return False
    if not np.array_equal(a.image, b.image):
        return False
    for ia, ib in zip(a.instances, b.instances):
        if ia.class_id != ib.class_id:
            return False
        if not np.array_equal(ia.polygon.points, ib.polygon.points):
            return False
        if ia.bbox.as_array().tolist() != ib.bbox.as_array().tolist():
            return False
    return True
