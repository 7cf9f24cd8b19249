"""First-frame conditioned attention.

Two self-attention variants let every frame look back at the first frame:

* spatial cross-frame attention extends the keys/values of frame ``i`` with all
  spatial tokens of frame 1;
* temporal window attention extends the keys/values of each spatial column
  with a ``K x K`` neighbourhood of frame-1 features around that column.

Inputs are plain tensors with any leading batch dimensions; projections are
bias-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch


@dataclass
class AttentionWeights:
    """Projections ``w_q, w_k, w_v: [C, d]`` and ``w_out: [d, C]``."""

    w_q: torch.Tensor
    w_k: torch.Tensor
    w_v: torch.Tensor
    w_out: torch.Tensor
    head_count: int = 1

    def __post_init__(self):
        d = self.w_q.shape[1]
        if self.w_k.shape != self.w_q.shape or self.w_v.shape != self.w_q.shape:
            raise ValueError("w_q, w_k, w_v must share shape [C, d]")
        if self.w_out.shape != (d, self.w_q.shape[0]):
            raise ValueError(f"w_out must be [{d}, {self.w_q.shape[0]}]")
        if self.head_count < 1 or d % self.head_count:
            raise ValueError(f"d={d} not divisible by head_count={self.head_count}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[1]

    @classmethod
    def random(cls, channels: int, dim: int, head_count: int = 1, generator=None, dtype=torch.float32):
        def draw(rows, cols):
            return torch.randn(rows, cols, generator=generator, dtype=dtype) / math.sqrt(rows)

        return cls(draw(channels, dim), draw(channels, dim), draw(channels, dim), draw(dim, channels), head_count)


@dataclass(frozen=True)
class RopeConfig:
    base_frequency: float = 10000.0
    rotated_dim: Optional[int] = None  # None rotates the whole head dimension

    def __post_init__(self):
        if self.base_frequency <= 0:
            raise ValueError("base_frequency must be positive")
        if self.rotated_dim is not None and self.rotated_dim % 2:
            raise ValueError("rotated_dim must be even")


@dataclass
class FirstFrameWindow:
    """Per-position neighbourhoods of first-frame features.

    ``tokens[..., h*W + w, j, :]`` is the ``j``-th (raster order, centre
    skipped) element of the ``K x K`` window centred at ``(h, w)``.
    """

    tokens: torch.Tensor
    window_size: int


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    *lead, L, d = x.shape
    return x.reshape(*lead, L, heads, d // heads).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    *lead, h, L, dh = x.shape
    return x.transpose(-3, -2).reshape(*lead, L, h * dh)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor):
    """Softmax attention over the last two axes; returns ``(output, probs)``."""
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    probs = torch.softmax(logits, dim=-1)
    return probs @ v, probs


def multihead_attention(
    queries: torch.Tensor,
    keyvals: torch.Tensor,
    weights: AttentionWeights,
    q_positions: Optional[torch.Tensor] = None,
    k_positions: Optional[torch.Tensor] = None,
    rope: Optional[RopeConfig] = None,
    return_probs: bool = False,
):
    """Queries ``[..., Lq, C]`` attend to ``[..., Lk, C]``; RoPE is applied per head when given."""
    h = weights.head_count
    q = _split_heads(queries @ weights.w_q, h)
    k = _split_heads(keyvals @ weights.w_k, h)
    v = _split_heads(keyvals @ weights.w_v, h)
    if rope is not None:
        q = rope_rotate(q, q_positions, rope)
        k = rope_rotate(k, k_positions, rope)
    out, probs = scaled_dot_attention(q, k, v)
    out = _merge_heads(out) @ weights.w_out
    return (out, probs) if return_probs else out


def self_attention(z: torch.Tensor, weights: AttentionWeights) -> torch.Tensor:
    return multihead_attention(z, z, weights)


def spatial_cross_frame_attention(z_i: torch.Tensor, z_1: torch.Tensor, weights: AttentionWeights, return_probs=False):
    """Self-attention of frame tokens ``[..., HW, C]`` with keys/values ``[z_i, z_1]``."""
    if z_i.shape != z_1.shape:
        raise ValueError(f"z_i {tuple(z_i.shape)} and z_1 {tuple(z_1.shape)} differ in shape")
    keyvals = torch.cat([z_i, z_1], dim=-2)
    return multihead_attention(z_i, keyvals, weights, return_probs=return_probs)


def rope_rotate(tokens: torch.Tensor, positions, rope: RopeConfig) -> torch.Tensor:
    """Rotate consecutive coordinate pairs of ``tokens [..., L, d]`` by ``position * theta_j``."""
    d = tokens.shape[-1]
    rd = d if rope.rotated_dim is None else rope.rotated_dim
    if rd % 2 or rd > d:
        raise ValueError(f"cannot rotate {rd} of {d} dims (must be even and <= d)")
    positions = torch.as_tensor(positions, dtype=torch.float64)
    if positions.shape != (tokens.shape[-2],):
        raise ValueError(f"need {tokens.shape[-2]} positions, got {tuple(positions.shape)}")
    theta = rope.base_frequency ** (-torch.arange(0, rd, 2, dtype=torch.float64) / rd)
    angles = positions[:, None] * theta[None, :]
    cos = torch.cos(angles).to(tokens.dtype)
    sin = torch.sin(angles).to(tokens.dtype)
    x = tokens[..., :rd]
    x_even, x_odd = x[..., 0::2], x[..., 1::2]
    rot = torch.stack([x_even * cos - x_odd * sin, x_even * sin + x_odd * cos], dim=-1).flatten(-2)
    return torch.cat([rot, tokens[..., rd:]], dim=-1) if rd < d else rot


def window_offsets(window_size: int) -> list[tuple[int, int]]:
    r = window_size // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dy, dx) != (0, 0)]


def build_first_frame_window(z1: torch.Tensor, window_size: int = 3) -> FirstFrameWindow:
    """Gather the ``K x K`` neighbourhood (minus centre) of every position of ``z1 [..., C, H, W]``.

    Positions outside the frame take the nearest boundary value.
    """
    K = int(window_size)
    if K != window_size or K < 1 or K % 2 == 0:
        raise ValueError(f"window size must be a positive odd integer, got {window_size}")
    *lead, C, H, W = z1.shape
    offsets = window_offsets(K)
    if not offsets:
        return FirstFrameWindow(z1.new_zeros(*lead, H * W, 0, C), K)
    hh = torch.arange(H)[:, None]
    ww = torch.arange(W)[None, :]
    flat = z1.reshape(*lead, C, H * W)
    gathered = []
    for dy, dx in offsets:
        src = ((hh + dy).clamp(0, H - 1) * W + (ww + dx).clamp(0, W - 1)).reshape(-1)
        gathered.append(flat[..., src])
    tokens = torch.stack(gathered, dim=-1)  # [..., C, HW, K*K-1]
    return FirstFrameWindow(tokens.movedim(-3, -1), K)


def temporal_window_attention(
    z_bar: torch.Tensor,
    window: FirstFrameWindow,
    weights: AttentionWeights,
    rope: Optional[RopeConfig] = RopeConfig(),
    return_probs: bool = False,
):
    """Temporal self-attention over ``z_bar [R, N, C]`` (one row per spatial position).

    Keys/values are the ``N`` frame tokens followed by that row's window
    tokens. Frame tokens get RoPE angles by frame index; window tokens share
    the first frame's angle (position 0).
    """
    rows, n, _ = z_bar.shape[-3:]
    if window.tokens.shape[:-2] != z_bar.shape[:-2]:
        raise ValueError(f"window rows {tuple(window.tokens.shape[:-2])} do not match z_bar rows {tuple(z_bar.shape[:-2])}")
    m = window.tokens.shape[-2]
    keyvals = torch.cat([z_bar, window.tokens.to(z_bar.dtype)], dim=-2)
    q_pos = torch.arange(n)
    k_pos = torch.cat([q_pos, torch.zeros(m, dtype=torch.long)])
    return multihead_attention(z_bar, keyvals, weights, q_pos, k_pos, rope, return_probs=return_probs)


def temporal_attention(z_bar: torch.Tensor, weights: AttentionWeights, rope: Optional[RopeConfig] = RopeConfig()):
    """Plain temporal self-attention over the ``N`` frame tokens of each row."""
    n = z_bar.shape[-2]
    pos = torch.arange(n)
    return multihead_attention(z_bar, z_bar, weights, pos, pos, rope)


def frames_to_rows(z: torch.Tensor) -> torch.Tensor:
    """``[B, N, C, H, W] -> [B*H*W, N, C]``."""
    B, N, C, H, W = z.shape
    return z.permute(0, 3, 4, 1, 2).reshape(B * H * W, N, C)


def rows_to_frames(z_bar: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
    B, N, C, H, W = shape
    return z_bar.reshape(B, H, W, N, C).permute(0, 3, 4, 1, 2)
