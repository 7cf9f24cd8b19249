"""Inflated video U-Net.

A 2D latent-diffusion U-Net whose every residual conv block is followed by a
temporal conv block and whose attention levels carry a temporal attention
block. Each temporal block blends its result with its input through a
learnable ``gamma`` initialised to 1, so a freshly built network acts frame by
frame. Spatial self-attention reads keys/values from the current frame and
frame 1; temporal attention adds a window of frame-1 features.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .attention import (
    AttentionWeights,
    RopeConfig,
    build_first_frame_window,
    frames_to_rows,
    rows_to_frames,
    scaled_dot_attention,
    self_attention,
    spatial_cross_frame_attention,
    temporal_attention,
    temporal_window_attention,
)
from .signals import ConditionSignal


@dataclass
class UNetConfig:
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2)
    attention_resolutions: tuple = (2,)  # downsampling factors carrying attention
    num_frames: int = 16
    latent_channels: int = 12
    latent_size: int = 8
    label_vocab: int = 10
    embed_dim: int = 128
    head_count: int = 4
    window_size: int = 3
    rope_base: float = 10000.0
    label_tokens: int = 4
    norm_groups: int = 8
    spatial_conditioning: bool = True
    temporal_conditioning: bool = True
    out_init_scale: float = 0.1

    def __post_init__(self):
        self.channel_multipliers = tuple(int(m) for m in self.channel_multipliers)
        self.attention_resolutions = tuple(sorted(int(r) for r in self.attention_resolutions))
        levels = len(self.channel_multipliers)
        if levels < 1:
            raise ValueError("need at least one level")
        if self.latent_size % (2 ** (levels - 1)):
            raise ValueError(f"latent size {self.latent_size} not divisible by 2^{levels - 1}")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise ValueError("window_size must be a positive odd integer")

    @property
    def null_label(self) -> int:
        return self.label_vocab

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_multipliers"] = list(self.channel_multipliers)
        d["attention_resolutions"] = list(self.attention_resolutions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def sinusoidal_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = x.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def mix_spatial_temporal(z_spatial: torch.Tensor, z_temporal: torch.Tensor, gamma) -> torch.Tensor:
    """Convex blend ``gamma * z_spatial + (1 - gamma) * z_temporal``."""
    if z_spatial.shape != z_temporal.shape:
        raise ValueError("z_spatial and z_temporal differ in shape")
    g = torch.as_tensor(gamma)
    if g.min() < 0 or g.max() > 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return g * z_spatial + (1 - g) * z_temporal


def inject_first_frame(noise: torch.Tensor, z1: torch.Tensor) -> torch.Tensor:
    """Replace frame 1 (axis -4) of ``noise`` with ``z1``."""
    if noise.shape[-3:] != z1.shape[-3:] or noise.dim() - z1.dim() != 1:
        raise ValueError(f"cannot inject {tuple(z1.shape)} into {tuple(noise.shape)}")
    out = noise.clone()
    out[..., 0, :, :, :] = z1
    return out


class GammaMixer(nn.Module):
    """Learnable blend weight kept inside ``[0, 1]``."""

    def __init__(self):
        super().__init__()
        self.gamma = nn.Parameter(torch.ones(()))

    def forward(self, z_spatial, z_temporal):
        return mix_spatial_temporal(z_spatial, z_temporal, self.gamma.clamp(0.0, 1.0))

    @torch.no_grad()
    def project(self):
        self.gamma.clamp_(0.0, 1.0)


class EmbeddingMLP(nn.Module):
    """Sinusoidal features through two affine maps."""

    def __init__(self, freq_dim: int, embed_dim: int, zero_out: bool = False):
        super().__init__()
        self.freq_dim = freq_dim
        self.linear_1 = nn.Linear(freq_dim, embed_dim)
        self.linear_2 = nn.Linear(embed_dim, embed_dim)
        if zero_out:
            nn.init.zeros_(self.linear_2.weight)
            nn.init.zeros_(self.linear_2.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = sinusoidal_embedding(x, self.freq_dim).to(self.linear_1.weight.dtype)
        return self.linear_2(F.silu(self.linear_1(h)))


def frame_interval_embedding(v: int, params: EmbeddingMLP) -> torch.Tensor:
    if int(v) != v or v < 1:
        raise ValueError(f"frame interval must be a positive integer, got {v}")
    return params(torch.tensor([int(v)]))[0]


class AttentionParams(nn.Module):
    """Bias-free q/k/v/out projections as parameters."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        scale = 1.0 / math.sqrt(channels)
        self.w_q = nn.Parameter(torch.randn(channels, channels) * scale)
        self.w_k = nn.Parameter(torch.randn(channels, channels) * scale)
        self.w_v = nn.Parameter(torch.randn(channels, channels) * scale)
        self.w_out = nn.Parameter(torch.randn(channels, channels) * scale)

    def weights(self) -> AttentionWeights:
        return AttentionWeights(self.w_q, self.w_k, self.w_v, self.w_out, self.heads)


class LabelCrossAttention(nn.Module):
    def __init__(self, channels: int, context_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels, bias=False)

    def forward(self, x: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        h = self.heads

        def split(t):
            *lead, L, d = t.shape
            return t.reshape(*lead, L, h, d // h).transpose(-3, -2)

        q, k, v = split(self.to_q(x)), split(self.to_k(context)), split(self.to_v(context))
        out, _ = scaled_dot_attention(q, k, v)
        *lead, _, L, _ = out.shape
        return self.to_out(out.transpose(-3, -2).reshape(*lead, L, -1))


class FeedForward(nn.Module):
    def __init__(self, channels: int, mult: int = 4):
        super().__init__()
        self.fc_1 = nn.Linear(channels, channels * mult)
        self.fc_2 = nn.Linear(channels * mult, channels)

    def forward(self, x):
        return self.fc_2(F.gelu(self.fc_1(x)))


class ResBlock(nn.Module):
    """Per-frame 2D residual block with timestep modulation; input ``[B*N, C, H, W]``."""

    def __init__(self, in_ch: int, out_ch: int, embed_dim: int, groups: int):
        super().__init__()
        self.norm_1 = nn.GroupNorm(groups, in_ch)
        self.conv_1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(embed_dim, out_ch)
        self.norm_2 = nn.GroupNorm(groups, out_ch)
        self.conv_2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv_1(F.silu(self.norm_1(x)))
        h = h + self.emb_proj(F.silu(emb))[:, :, None, None]
        h = self.conv_2(F.silu(self.norm_2(h)))
        return self.skip(x) + h


def temporal_conv(z: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Convolution along frames with a ``(3, 1, 1)`` kernel, zero padded in time.

    ``z`` is ``[B, N, C, H, W]``; ``weight`` is ``[C_out, C_in, 3]``.
    """
    B, N, C, H, W = z.shape
    x = z.transpose(1, 2).reshape(B, C, N, H * W)
    y = F.conv2d(x, weight[:, :, :, None], bias, padding=(weight.shape[-1] // 2, 0))
    return y.reshape(B, -1, N, H, W).transpose(1, 2)


class TemporalConvBlock(nn.Module):
    """Two temporal convolutions in a residual block, gamma-mixed with the input."""

    def __init__(self, channels: int, groups: int):
        super().__init__()
        self.norm_1 = nn.GroupNorm(groups, channels)
        self.conv_1 = nn.Conv1d(channels, channels, 3)
        self.norm_2 = nn.GroupNorm(groups, channels)
        self.conv_2 = nn.Conv1d(channels, channels, 3)
        self.mixer = GammaMixer()

    def _norm(self, norm, z):
        B, N = z.shape[:2]
        return norm(z.reshape(B * N, *z.shape[2:])).reshape(z.shape)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        """``z`` is ``[B, N, C, H, W]`` or ``[N, C, H, W]``."""
        squeeze = z.dim() == 4
        if squeeze:
            z = z.unsqueeze(0)
        h = temporal_conv(F.silu(self._norm(self.norm_1, z)), self.conv_1.weight, self.conv_1.bias)
        h = temporal_conv(F.silu(self._norm(self.norm_2, h)), self.conv_2.weight, self.conv_2.bias)
        out = self.mixer(z, z + h)
        return out[0] if squeeze else out


def temporal_conv_block(z: torch.Tensor, params: TemporalConvBlock) -> torch.Tensor:
    return params(z)


class SpatialTransformer(nn.Module):
    """Per-frame attention block: cross-frame self-attention, label cross-attention, feed-forward."""

    def __init__(self, channels: int, context_dim: int, heads: int, groups: int, cross_frame: bool = True):
        super().__init__()
        self.cross_frame = cross_frame
        self.norm = nn.GroupNorm(groups, channels)
        self.proj_in = nn.Linear(channels, channels)
        self.ln_1 = nn.LayerNorm(channels)
        self.attn = AttentionParams(channels, heads)
        self.ln_2 = nn.LayerNorm(channels)
        self.cross = LabelCrossAttention(channels, context_dim, heads)
        self.ln_3 = nn.LayerNorm(channels)
        self.ff = FeedForward(channels)
        self.proj_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, context: torch.Tensor, frames: int) -> torch.Tensor:
        """``x [B*N, C, H, W]``, ``context [B, L, E]``."""
        BN, C, H, W = x.shape
        B = BN // frames
        h = self.norm(x).reshape(B, frames, C, H * W).transpose(-1, -2)  # [B, N, HW, C]
        h = self.proj_in(h)
        hn = self.ln_1(h)
        if self.cross_frame:
            h = h + spatial_cross_frame_attention(hn, hn[:, :1].expand_as(hn), self.attn.weights())
        else:
            h = h + self_attention(hn, self.attn.weights())
        h = h + self.cross(self.ln_2(h), context[:, None])
        h = h + self.ff(self.ln_3(h))
        h = self.proj_out(h)
        return x + h.transpose(-1, -2).reshape(BN, C, H, W)


class TemporalTransformer(nn.Module):
    """Attention block along frames with a first-frame window, gamma-mixed with the input."""

    def __init__(self, channels: int, context_dim: int, heads: int, groups: int,
                 window_size: int = 3, rope_base: float = 10000.0, windowed: bool = True):
        super().__init__()
        self.window_size = window_size
        self.windowed = windowed
        self.rope = RopeConfig(rope_base)
        self.norm = nn.GroupNorm(groups, channels)
        self.proj_in = nn.Linear(channels, channels)
        self.ln_1 = nn.LayerNorm(channels)
        self.attn = AttentionParams(channels, heads)
        self.ln_2 = nn.LayerNorm(channels)
        self.cross = LabelCrossAttention(channels, context_dim, heads)
        self.ln_3 = nn.LayerNorm(channels)
        self.ff = FeedForward(channels)
        self.proj_out = nn.Linear(channels, channels)
        self.mixer = GammaMixer()

    def forward(self, z: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """``z [B, N, C, H, W]``, ``context [B, L, E]``."""
        B, N, C, H, W = z.shape
        normed = self.norm(z.reshape(B * N, C, H, W)).reshape(z.shape)
        h = self.proj_in(frames_to_rows(normed))  # [B*HW, N, C]
        hn = self.ln_1(h)
        if self.windowed:
            first = hn[:, 0].reshape(B, H, W, C).permute(0, 3, 1, 2)
            window = build_first_frame_window(first, self.window_size)
            window.tokens = window.tokens.reshape(B * H * W, -1, C)
            h = h + temporal_window_attention(hn, window, self.attn.weights(), self.rope)
        else:
            h = h + temporal_attention(hn, self.attn.weights(), self.rope)
        ctx = context.repeat_interleave(H * W, dim=0)
        h = h + self.cross(self.ln_2(h), ctx)
        h = h + self.ff(self.ln_3(h))
        h = self.proj_out(h)
        return self.mixer(z, z + rows_to_frames(h, z.shape))


class VideoUNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = cfg = config
        ch = cfg.base_channels
        E = cfg.embed_dim
        g = cfg.norm_groups
        heads = cfg.head_count

        self.time_embed = EmbeddingMLP(ch, E)
        self.fps_embed = EmbeddingMLP(ch, E, zero_out=True)
        self.label_embed = nn.Embedding(cfg.label_vocab + 1, cfg.label_tokens * E)

        def attn_pair(c):
            return (
                SpatialTransformer(c, E, heads, g, cross_frame=cfg.spatial_conditioning),
                TemporalTransformer(c, E, heads, g, cfg.window_size, cfg.rope_base,
                                    windowed=cfg.temporal_conditioning),
            )

        self.conv_in = nn.Conv2d(cfg.latent_channels, ch, 3, padding=1)
        self.down = nn.ModuleList()
        skip_channels = []
        c_prev = ch
        levels = len(cfg.channel_multipliers)
        for level, mult in enumerate(cfg.channel_multipliers):
            c = ch * mult
            stage = nn.ModuleDict({
                "res": ResBlock(c_prev, c, E, g),
                "temporal_conv": TemporalConvBlock(c, g),
            })
            if 2**level in cfg.attention_resolutions:
                stage["spatial_attn"], stage["temporal_attn"] = attn_pair(c)
            if level < levels - 1:
                stage["downsample"] = nn.Conv2d(c, c, 3, stride=2, padding=1)
            self.down.append(stage)
            skip_channels.append(c)
            c_prev = c

        spatial_mid, temporal_mid = attn_pair(c_prev)
        self.mid = nn.ModuleDict({
            "res_1": ResBlock(c_prev, c_prev, E, g),
            "temporal_conv_1": TemporalConvBlock(c_prev, g),
            "spatial_attn": spatial_mid,
            "temporal_attn": temporal_mid,
            "res_2": ResBlock(c_prev, c_prev, E, g),
            "temporal_conv_2": TemporalConvBlock(c_prev, g),
        })

        self.up = nn.ModuleList()
        for level in reversed(range(levels)):
            c = ch * cfg.channel_multipliers[level]
            stage = nn.ModuleDict({
                "res": ResBlock(c_prev + skip_channels[level], c, E, g),
                "temporal_conv": TemporalConvBlock(c, g),
            })
            if 2**level in cfg.attention_resolutions:
                stage["spatial_attn"], stage["temporal_attn"] = attn_pair(c)
            if level > 0:
                stage["upsample"] = nn.Conv2d(c, c, 3, padding=1)
            self.up.append(stage)
            c_prev = c

        self.norm_out = nn.GroupNorm(g, c_prev)
        self.conv_out = nn.Conv2d(c_prev, cfg.latent_channels, 3, padding=1)
        with torch.no_grad():
            self.conv_out.weight.mul_(cfg.out_init_scale)
            self.conv_out.bias.zero_()

    @classmethod
    def build(cls, config: UNetConfig, seed: int = 0, dtype=torch.float32) -> "VideoUNet":
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            model = cls(config)
        return model.to(dtype)

    def gamma_mixers(self):
        return [m for m in self.modules() if isinstance(m, GammaMixer)]

    def project_gammas(self):
        for m in self.gamma_mixers():
            m.project()

    def temporal_modules(self):
        return [m for m in self.modules() if isinstance(m, (TemporalConvBlock, TemporalTransformer))]

    def embedding(self, t, interval):
        return self.time_embed(t) + self.fps_embed(interval)

    def _temporal(self, module, h, frames, *args):
        if module is None:
            return h
        BN = h.shape[0]
        video = h.reshape(BN // frames, frames, *h.shape[1:])
        return module(video, *args).reshape(h.shape)

    def _stage(self, stage, h, emb, context, frames, spatial_only, res_key="res", tc_key="temporal_conv"):
        h = stage[res_key](h, emb)
        if not spatial_only:
            h = self._temporal(stage[tc_key], h, frames)
        if "spatial_attn" in stage:
            h = stage["spatial_attn"](h, context, frames)
            if not spatial_only:
                h = self._temporal(stage["temporal_attn"], h, frames, context)
        return h

    def forward(self, z: torch.Tensor, t: torch.Tensor, labels: torch.Tensor, intervals: torch.Tensor,
                spatial_only: bool = False) -> torch.Tensor:
        """Epsilon prediction for ``z [B, N, C, H, W]``.

        ``labels`` uses ``config.null_label`` for the unconditional branch.
        ``spatial_only`` skips every temporal block (reference path for tests).
        """
        cfg = self.config
        B, N, C, H, W = z.shape
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1).expand(B)
        intervals = torch.as_tensor(intervals, dtype=torch.long).reshape(-1).expand(B)
        labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1).expand(B)
        if labels.min() < 0 or labels.max() > cfg.null_label:
            raise ValueError(f"label id out of vocabulary [0, {cfg.label_vocab})")
        if intervals.min() < 1:
            raise ValueError("frame interval must be >= 1")

        emb = self.embedding(t, intervals).repeat_interleave(N, dim=0)
        context = self.label_embed(labels).reshape(B, cfg.label_tokens, cfg.embed_dim)

        h = self.conv_in(z.reshape(B * N, C, H, W))
        skips = []
        for stage in self.down:
            h = self._stage(stage, h, emb, context, N, spatial_only)
            skips.append(h)
            if "downsample" in stage:
                h = stage["downsample"](h)

        mid = self.mid
        h = mid["res_1"](h, emb)
        if not spatial_only:
            h = self._temporal(mid["temporal_conv_1"], h, N)
        h = mid["spatial_attn"](h, context, N)
        if not spatial_only:
            h = self._temporal(mid["temporal_attn"], h, N, context)
        h = mid["res_2"](h, emb)
        if not spatial_only:
            h = self._temporal(mid["temporal_conv_2"], h, N)

        for stage in self.up:
            h = torch.cat([h, skips.pop()], dim=1)
            h = self._stage(stage, h, emb, context, N, spatial_only)
            if "upsample" in stage:
                h = stage["upsample"](F.interpolate(h, scale_factor=2.0, mode="nearest"))

        h = self.conv_out(F.silu(self.norm_out(h)))
        return h.reshape(B, N, C, H, W)

    def label_index(self, label_id: Optional[int]) -> int:
        if label_id is None:
            return self.config.null_label
        if not 0 <= label_id < self.config.label_vocab:
            raise ValueError(f"label id {label_id} out of vocabulary [0, {self.config.label_vocab})")
        return int(label_id)

    def denoise(self, z_t: torch.Tensor, t: int, cond: ConditionSignal) -> torch.Tensor:
        """Single-video callable used by the samplers: ``[N, C, H, W] -> [N, C, H, W]``."""
        dtype = next(self.parameters()).dtype
        out = self.forward(
            z_t.unsqueeze(0).to(dtype),
            torch.tensor([int(t)]),
            torch.tensor([self.label_index(cond.label_id)]),
            torch.tensor([int(cond.frame_interval)]),
        )
        return out[0].to(z_t.dtype)


def unet_forward(z_t: torch.Tensor, cond: ConditionSignal, params: VideoUNet, config: Optional[UNetConfig] = None,
                 spatial_only: bool = False) -> torch.Tensor:
    """Functional form of one forward pass on a single video ``[N, C, H, W]``."""
    if config is not None and config != params.config:
        raise ValueError("config does not match the parameters")
    if cond.timestep is None:
        raise ValueError("cond.timestep must be set")
    return params.forward(
        z_t.unsqueeze(0),
        torch.tensor([cond.timestep]),
        torch.tensor([params.label_index(cond.label_id)]),
        torch.tensor([cond.frame_interval]),
        spatial_only=spatial_only,
    )[0]
