"""Mamba Evolution Block: a non-causal, scalar-gated state-space scan over
contour-point tokens.

Each block projects tokens into scan variables (five projections: X, B, C and
the scalar gates a, d), mixes X with its two antecedent and two subsequent
ring neighbours through a depthwise circular convolution, then runs the gated
recurrence Z_k = (d_k a_k) (Z_{k-1} + B_k X~_k^T) with readout
Y_k = C_k^T Z_k + D_skip * X~_k. The final Z is returned so callers can carry
hidden state across evolution iterations; within a stack it chains block to
block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import ParamStore, Tensor

__all__ = ["MebConfig", "init_meb_params", "meb_forward", "meb_stack", "zero_state"]


@dataclass(frozen=True)
class MebConfig:
    d_model: int = 64
    d_inner: int = 64
    d_state: int = 16
    conv_width: int = 5
    depth: int = 3

    def __post_init__(self):
        if self.conv_width % 2 != 1:
            raise ValueError(f"conv width must be odd, got {self.conv_width}")
        if min(self.d_model, self.d_inner, self.d_state, self.depth) < 1:
            raise ValueError("all MEB dimensions must be >= 1")


def zero_state(cfg: MebConfig) -> Tensor:
    return Tensor(np.zeros((cfg.d_state, cfg.d_inner)))


def init_meb_params(
    params: ParamStore, cfg: MebConfig, rng: np.random.Generator, prefix: str = "meb"
) -> None:
    scale = 1.0 / np.sqrt(cfg.d_model)
    for i in range(cfg.depth):
        p = f"{prefix}.{i}"
        params.add(f"{p}.w_x", rng.normal(scale=scale, size=(cfg.d_model, cfg.d_inner)))
        params.add(f"{p}.b_x", np.zeros((1, cfg.d_inner)))
        params.add(f"{p}.w_b", rng.normal(scale=scale, size=(cfg.d_model, cfg.d_state)))
        params.add(f"{p}.b_b", np.zeros((1, cfg.d_state)))
        params.add(f"{p}.w_c", rng.normal(scale=scale, size=(cfg.d_model, cfg.d_state)))
        params.add(f"{p}.b_c", np.zeros((1, cfg.d_state)))
        params.add(f"{p}.w_a", rng.normal(scale=scale, size=(cfg.d_model, 1)))
        params.add(f"{p}.b_a", np.full((1, 1), 1.0))
        params.add(f"{p}.w_d", rng.normal(scale=scale, size=(cfg.d_model, 1)))
        params.add(f"{p}.b_d", np.full((1, 1), 1.0))
        params.add(f"{p}.conv", rng.normal(scale=1.0 / np.sqrt(cfg.conv_width), size=(cfg.d_inner, cfg.conv_width)))
        params.add(f"{p}.d_skip", np.ones((1, cfg.d_inner)))
        params.add(f"{p}.w_out", rng.normal(scale=0.02, size=(cfg.d_inner, cfg.d_model)))
        params.add(f"{p}.b_out", np.zeros((1, cfg.d_model)))


def meb_forward(
    tokens: Tensor,
    z_in: Tensor | None,
    params: ParamStore,
    cfg: MebConfig,
    block: int = 0,
    prefix: str = "meb",
) -> tuple[Tensor, Tensor]:
    """One MEB block over (N, d_model) tokens; returns (outputs, carried Z).

    z_in of None seeds the state from token 0 (B_0 outer X~_0), the fresh-
    instance convention; pass an explicit state (e.g. zero_state) otherwise.
    """
    n = tokens.shape[0]
    if tokens.data.ndim != 2 or tokens.shape[1] != cfg.d_model:
        raise ValueError(f"tokens must be (N, {cfg.d_model}), got {tokens.shape}")
    if n < cfg.conv_width:
        raise ValueError(f"need at least {cfg.conv_width} tokens on the ring, got {n}")
    p = f"{prefix}.{block}"
    x = tokens @ params[f"{p}.w_x"] + params[f"{p}.b_x"]
    b = dc.sigmoid(tokens @ params[f"{p}.w_b"] + params[f"{p}.b_b"])
    c = dc.sigmoid(tokens @ params[f"{p}.w_c"] + params[f"{p}.b_c"])
    a_gate = dc.sigmoid(tokens @ params[f"{p}.w_a"] + params[f"{p}.b_a"])
    d_gate = dc.sigmoid(tokens @ params[f"{p}.w_d"] + params[f"{p}.b_d"])
    xt = dc.sigmoid(dc.circular_conv1d(x, params[f"{p}.conv"]))
    g = a_gate * d_gate
    if z_in is None:
        first = np.array([0])
        z_in = dc.transpose(dc.gather(b, first)) @ dc.gather(xt, first)
    scan = dc.ssm_scan(g, b, c, xt, z_in)
    y = dc.gather(scan, np.arange(n)) + params[f"{p}.d_skip"] * xt
    z_out = dc.gather(scan, np.arange(n, n + cfg.d_state))
    out = y @ params[f"{p}.w_out"] + params[f"{p}.b_out"] + tokens
    return out, z_out


def meb_stack(
    tokens: Tensor,
    z_in: Tensor | None,
    params: ParamStore,
    cfg: MebConfig,
    prefix: str = "meb",
) -> tuple[Tensor, Tensor]:
    """Run all blocks sequentially, chaining the hidden state block to block;
    the final Z is the cross-iteration carry."""
    z = z_in
    for i in range(cfg.depth):
        tokens, z = meb_forward(tokens, z, params, cfg, block=i, prefix=prefix)
    return tokens, z
