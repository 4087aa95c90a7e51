"""Transformer building blocks used by the CCT encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, add, gelu, masked_scale, matmul, reshape, scale, softmax, transpose


class DropState:
    """Random source and train/eval switch for the stochastic layers.

    One instance belongs to one forward pass. In eval mode no random numbers
    are drawn, so eval output never depends on the seed.
    """

    def __init__(self, seed: int = 0, training: bool = False):
        self.seed = seed
        self.training = training
        self.rng = np.random.default_rng(seed)

    @classmethod
    def eval(cls) -> DropState:
        return cls(0, training=False)

    @property
    def mode(self) -> str:
        return "train" if self.training else "eval"


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor
    num_heads: int

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.num_heads

    def validate(self) -> None:
        d = self.dim
        if d % self.num_heads:
            raise ShapeError(f"embedding dim {d} not divisible by {self.num_heads} heads")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(d, d)}")
        for name in ("bq", "bk", "bv", "bo"):
            if getattr(self, name).shape != (d,):
                raise ShapeError(f"{name} has shape {getattr(self, name).shape}, expected {(d,)}")


def dropout(x: Tensor, rate: float, drop: DropState) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not drop.training or rate == 0.0:
        return x
    keep = drop.rng.random(x.shape) >= rate
    return masked_scale(x, keep / (1.0 - rate))


def stochastic_depth(branch: Tensor, p_drop: float, drop: DropState) -> Tensor:
    """Zero the whole residual branch per sample with probability ``p_drop``.

    Survivors are scaled by ``1 / (1 - p_drop)`` so eval needs no rescale.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError(f"stochastic depth probability must be in [0, 1], got {p_drop}")
    if not drop.training or p_drop == 0.0:
        return branch
    if p_drop == 1.0:
        return masked_scale(branch, np.zeros(branch.shape))
    shape = (branch.shape[0],) + (1,) * (branch.ndim - 1)
    keep = drop.rng.random(shape) >= p_drop
    return masked_scale(branch, keep / (1.0 - p_drop))


def add_positional_embedding(tokens: Tensor, pos: Tensor) -> Tensor:
    if tokens.ndim != 3 or pos.shape != tokens.shape[1:]:
        raise ShapeError(
            f"positional table {pos.shape} does not match token shape {tokens.shape}; "
            "model and config disagree on the token count"
        )
    return add(tokens, pos)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense: input {x.shape} does not match weight {w.shape}")
    y = matmul(x, w)
    return add(y, b) if b is not None else y


def multi_head_attention(
    x: Tensor,
    p: AttentionParams,
    drop: DropState,
    attn_dropout: float = 0.0,
    return_weights: bool = False,
):
    """Self-attention over ``x[B,T,d]`` with ``p.num_heads`` heads.

    With ``return_weights`` the post-softmax weights ``[B,H,T,T]`` are
    returned alongside the output (before attention dropout).
    """
    p.validate()
    B, T, d = x.shape
    if d != p.dim:
        raise ShapeError(f"attention input dim {d} does not match params dim {p.dim}")
    H, hd = p.num_heads, p.head_dim

    def heads(t: Tensor) -> Tensor:
        return transpose(reshape(t, (B, T, H, hd)), (0, 2, 1, 3))

    q = heads(dense(x, p.wq, p.bq))
    k = heads(dense(x, p.wk, p.bk))
    v = heads(dense(x, p.wv, p.bv))
    scores = scale(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    weights = softmax(scores, axis=-1)
    attended = matmul(dropout(weights, attn_dropout, drop), v)
    merged = reshape(transpose(attended, (0, 2, 1, 3)), (B, T, d))
    out = dense(merged, p.wo, p.bo)
    if return_weights:
        return out, weights.data
    return out


def feed_forward(
    x: Tensor,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
    drop: DropState,
    rate: float = 0.0,
) -> Tensor:
    """dense -> GELU -> dropout -> dense -> dropout."""
    if w1.shape[0] != x.shape[-1] or w2.shape != (w1.shape[1], x.shape[-1]):
        raise ShapeError(f"feed_forward weights {w1.shape}, {w2.shape} do not fit input {x.shape}")
    h = dropout(gelu(dense(x, w1, b1)), rate, drop)
    return dropout(dense(h, w2, b2), rate, drop)
