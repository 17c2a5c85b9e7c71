"""Dual-classification heads and the loss terms of the training objective.

The detection-side classifier pools box-grid features; the segmentation-side
classifier pools the final-iteration contour tokens. They are tied by a joint
cross-entropy on the weighted logit mix and a soft consistency term whose
strength scales inversely with instance area, so small structures get louder
supervision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor
from .geometry import Contour, discrete_curvature

__all__ = [
    "SynergyConfig",
    "init_class_head_params",
    "classify_detection",
    "classify_segmentation",
    "log_softmax",
    "loss_LH",
    "loss_LS",
    "size_penalty",
    "curvature_loss",
    "total_loss",
]


@dataclass(frozen=True)
class SynergyConfig:
    w_d: float = 0.5
    w_s: float = 0.5
    a_ref: float = 200.0  # reset to the corpus median instance area at training start
    k_min: float = 0.5
    k_max: float = 4.0

    def __post_init__(self):
        if self.w_d < 0 or self.w_s < 0 or abs(self.w_d + self.w_s - 1.0) > 1e-9:
            raise ValueError("classifier weights must be non-negative and sum to 1")
        if self.k_min > self.k_max or self.a_ref <= 0:
            raise ValueError("need k_min <= k_max and a_ref > 0")


HEAD_HIDDEN = 64


def init_class_head_params(params: ParamStore, n_classes: int, rng: np.random.Generator) -> None:
    for name, in_dim in (("cd", 66), ("cs", 64)):
        params.add(f"{name}.w1", rng.normal(scale=1.0 / np.sqrt(in_dim), size=(in_dim, HEAD_HIDDEN)))
        params.add(f"{name}.b1", np.zeros((1, HEAD_HIDDEN)))
        params.add(f"{name}.w2", rng.normal(scale=1.0 / np.sqrt(HEAD_HIDDEN), size=(HEAD_HIDDEN, n_classes)))
        params.add(f"{name}.b2", np.zeros((1, n_classes)))


def _head(pooled: Tensor, params: ParamStore, name: str) -> Tensor:
    h = dc.tanh(pooled @ params[f"{name}.w1"] + params[f"{name}.b1"])
    logits = h @ params[f"{name}.w2"] + params[f"{name}.b2"]
    return dc.reshape(logits, (logits.shape[1],))


def classify_detection(grid_feats: Tensor, params: ParamStore) -> Tensor:
    """Class logits from mean-pooled (M^2, 66) grid features."""
    pooled = dc.reshape(dc.mean(grid_feats, axis=0), (1, grid_feats.shape[1]))
    return _head(pooled, params, "cd")


def classify_segmentation(tokens: Tensor, params: ParamStore) -> Tensor:
    """Class logits from mean-pooled (N, 64) final-iteration point features."""
    pooled = dc.reshape(dc.mean(tokens, axis=0), (1, tokens.shape[1]))
    return _head(pooled, params, "cs")


def log_softmax(logits: Tensor) -> Tensor:
    shifted = logits - float(logits.data.max())
    return shifted - dc.log(dc.tsum(dc.exp(shifted)))


def loss_LH(p_d: Tensor, p_s: Tensor, label: int, cfg: SynergyConfig) -> Tensor:
    """Cross-entropy of the softmaxed weighted logit sum against the label."""
    if p_d.shape != p_s.shape:
        raise ValueError(f"logit shapes differ: {p_d.shape} vs {p_s.shape}")
    n_classes = p_d.shape[0]
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} out of range for {n_classes} classes")
    mixed = cfg.w_d * p_d + cfg.w_s * p_s
    return -dc.tsum(dc.gather(log_softmax(mixed), [label]))


def loss_LS(p_d: Tensor, p_s: Tensor, gt_area: float, cfg: SynergyConfig) -> Tensor:
    """Size-weighted soft cross-entropy of p_s against the (frozen) p_d
    distribution; gradients reach p_s only."""
    if p_d.shape != p_s.shape:
        raise ValueError(f"logit shapes differ: {p_d.shape} vs {p_s.shape}")
    target = dc.softmax(dc.detach(p_d))
    k = size_penalty(gt_area, cfg)
    return -k * dc.tsum(target * log_softmax(p_s))


def size_penalty(area: float, cfg: SynergyConfig) -> float:
    """K = clamp(A_ref / area, k_min, k_max)."""
    if area <= 0:
        raise ValueError(f"instance area must be positive, got {area}")
    return float(min(max(cfg.a_ref / area, cfg.k_min), cfg.k_max))


def curvature_loss(contour: Contour) -> float:
    """Sum of kappa * w(kappa) = kappa^3 over vertices; scales as 1/length^3.

    Used as the density driver for curvature-weighted resampling; also
    available as a regularizer (weight 0 by default).
    """
    prof = discrete_curvature(contour)
    return float(np.sum(prof.kappa * prof.weight))


def total_loss(components: dict[str, Tensor | float], cfg: SynergyConfig) -> Tensor:
    """L = L_evol(macro) + L_evol(micro, all iterations) + 0.5 L_H + 0.5 L_S
    + L_detector, with the detector term pinned to zero."""
    weights = {
        "evol_macro": 1.0,
        "evol_micro": 1.0,
        "l_h": 0.5,
        "l_s": 0.5,
        "l_detector": 1.0,
    }
    unknown = set(components) - set(weights)
    if unknown:
        raise ValueError(f"unknown loss components: {sorted(unknown)}")
    total: Tensor | None = None
    for name, w in weights.items():
        if name not in components:
            continue
        c = components[name]
        value = float(c.data) if isinstance(c, Tensor) else float(c)
        if not math.isfinite(value):
            raise ValueError(f"non-finite loss component {name!r}: {value}")
        term = (c if isinstance(c, Tensor) else Tensor(c)) * w
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)
