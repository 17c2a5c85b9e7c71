"""Energy shape-prior maps: distance decay around object boundaries plus an
edge potential, and a small trainable predictor for the same field.

The oracle path (``compose_espm``) is pure numpy/scipy and is what training
uses in ``oracle`` energy mode; ``EnergyNet`` learns to imitate it from the
image alone for ``learned`` mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import diffcore as dc
from .diffcore import ParamStore, Tensor

__all__ = [
    "EnergyConfig",
    "distance_field",
    "decay_transform",
    "boundary_pixels",
    "compose_espm",
    "charbonnier",
    "EnergyNet",
]

# decay so the Log transform reaches exactly 0 at the normalized maximum
ALPHA_LOG_DEFAULT = (np.e - 1.0) / 255.0


@dataclass(frozen=True)
class EnergyConfig:
    """Parameters of the energy-map construction."""

    transform: str = "exp"  # one of lin / exp / log
    lambda_exp: float = 0.02
    alpha_log: float = ALPHA_LOG_DEFAULT
    sigma_gauss: float = 2.0
    lambda_edge: float = 16.0
    grad_floor: float = 1e-3
    # optional fixed normalization scale; None means per-image min-max
    norm_max: float | None = None

    def __post_init__(self):
        if self.transform not in ("lin", "exp", "log"):
            raise ValueError(f"unknown decay transform {self.transform!r}")
        if self.lambda_exp <= 0 or self.alpha_log <= 0:
            raise ValueError("decay rates must be strictly positive")
        if self.sigma_gauss < 0 or self.lambda_edge < 0 or self.grad_floor <= 0:
            raise ValueError("sigma_gauss/lambda_edge must be >= 0 and grad_floor > 0")


def distance_field(boundary: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel center to the nearest
    boundary pixel center."""
    b = np.asarray(boundary, dtype=bool)
    if not b.any():
        raise ValueError("empty boundary: no pixels set")
    return ndimage.distance_transform_edt(~b)


def _normalize(d: np.ndarray, norm_max: float | None) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    lo = d.min()
    if norm_max is not None:
        scale = norm_max
    else:
        scale = d.max() - lo
    if scale <= 0:
        return np.zeros_like(d)
    return np.clip((d - lo) / scale, 0.0, 1.0) * 255.0


def decay_transform(d: np.ndarray, config: EnergyConfig) -> np.ndarray:
    """Map a distance field to boundary-attraction energy in [0, 255]."""
    if np.any(np.asarray(d) < 0):
        raise ValueError("distance field must be non-negative")
    norm = _normalize(d, config.norm_max)
    if config.transform == "lin":
        out = 255.0 - norm
    elif config.transform == "exp":
        out = 255.0 * np.exp(-config.lambda_exp * norm)
    else:
        out = 255.0 * (1.0 - np.log1p(config.alpha_log * norm))
    return np.clip(out, 0.0, 255.0)


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Interior boundary: mask pixels with at least one 4-neighbour outside
    the mask (image border counts as outside)."""
    m = np.asarray(mask, dtype=bool)
    padded = np.pad(m, 1)
    inner = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return m & ~inner


def compose_espm(
    image: np.ndarray, instance_masks: list[np.ndarray], config: EnergyConfig
) -> np.ndarray:
    """Full energy map: smoothed distance decay from the union of instance
    boundaries plus the weak-edge potential, clamped to [0, 255]."""
    masks = [np.asarray(m, dtype=bool) for m in instance_masks]
    if not masks or not any(m.any() for m in masks):
        raise ValueError("compose_espm needs at least one non-empty instance mask")
    boundary = np.zeros_like(masks[0])
    for m in masks:
        boundary |= boundary_pixels(m)
    energy = decay_transform(distance_field(boundary), config)
    if config.sigma_gauss > 0:
        energy = ndimage.gaussian_filter(energy, config.sigma_gauss, mode="reflect")
    if config.lambda_edge > 0:
        img = np.asarray(image, dtype=np.float64) / 255.0
        gy, gx = np.gradient(img)
        grad = np.sqrt(gx * gx + gy * gy)
        energy = energy + config.lambda_edge * np.maximum(grad, config.grad_floor) ** -0.5
    return np.clip(energy, 0.0, 255.0)


def charbonnier(pred, gt, eps: float = 1e-3):
    """Smooth l1 surrogate: mean over pixels of sqrt(diff^2 + eps^2).

    Accepts Tensors (differentiable) or arrays (plain float result).
    """
    if isinstance(pred, Tensor) or isinstance(gt, Tensor):
        p = pred if isinstance(pred, Tensor) else Tensor(pred)
        g = gt if isinstance(gt, Tensor) else Tensor(gt)
        diff = p - g
        return dc.mean(dc.sqrt(diff * diff + eps * eps))
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return float(np.mean(np.hypot(diff, eps)))


class EnergyNet:
    """Small encoder-decoder predicting the energy map from the image.

    Three downsampling blocks (3x3 conv + 2x2 mean pool), three upsampling
    blocks (nearest 2x + 3x3 conv), then a 1x1 head with sigmoid scaled to
    [0, 255]. Input must be 128x128.
    """

    CHANNELS = (8, 16, 24)

    def __init__(self, params: ParamStore | None = None, rng: np.random.Generator | None = None):
        if params is None:
            params = ParamStore()
            rng = rng if rng is not None else np.random.default_rng(0)
            c0, c1, c2 = self.CHANNELS
            plan = [
                ("enc0", 1, c0),
                ("enc1", c0, c1),
                ("enc2", c1, c2),
                ("dec0", c2, c1),
                ("dec1", c1, c0),
                ("dec2", c0, c0),
            ]
            for name, cin, cout in plan:
                params.add(f"energy.{name}.w", rng.normal(scale=1.0 / np.sqrt(9 * cin), size=(3, 3, cin, cout)))
                params.add(f"energy.{name}.b", np.zeros(cout))
            params.add("energy.head.w", rng.normal(scale=0.1, size=(1, 1, c0, 1)))
            params.add("energy.head.b", np.zeros(1))
        self.params = params

    def _block(self, x: Tensor, name: str) -> Tensor:
        w = self.params[f"energy.{name}.w"]
        b = self.params[f"energy.{name}.b"]
        return dc.tanh(dc.conv2d(x, w) + b)

    def forward(self, image: np.ndarray | Tensor) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64))
        if x.shape[:2] != (128, 128):
            raise ValueError(f"energy net expects a 128x128 image, got {x.shape}")
        if x.data.ndim == 2:
            x = dc.reshape(x, (128, 128, 1))
        x = x * (1.0 / 255.0)
        x = dc.avg_pool2(self._block(x, "enc0"))
        x = dc.avg_pool2(self._block(x, "enc1"))
        x = dc.avg_pool2(self._block(x, "enc2"))
        x = self._block(dc.upsample2(x), "dec0")
        x = self._block(dc.upsample2(x), "dec1")
        x = self._block(dc.upsample2(x), "dec2")
        logits = dc.conv2d(x, self.params["energy.head.w"]) + self.params["energy.head.b"]
        out = dc.sigmoid(logits) * 255.0
        return dc.reshape(out, (128, 128))

    def predict(self, image: np.ndarray) -> np.ndarray:
        return self.forward(image).data
