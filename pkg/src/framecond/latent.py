"""Exact invertible latent map: 2x2 space-to-depth.

Stands in for a learned autoencoder. Encoding a ``[..., C, H, W]`` pixel
tensor gives ``[..., 4C, H/2, W/2]``; the map is a permutation of entries, so
``decode(encode(x))`` reproduces ``x`` bit for bit.
"""

from __future__ import annotations

import torch

PATCH = 2


def encode(x: torch.Tensor) -> torch.Tensor:
    *lead, C, H, W = x.shape
    if H % PATCH or W % PATCH:
        raise ValueError(f"spatial size {H}x{W} not divisible by {PATCH}")
    x = x.reshape(*lead, C, H // PATCH, PATCH, W // PATCH, PATCH)
    n = len(lead)
    # [..., C, h, p, w, q] -> [..., C, p, q, h, w]
    x = x.permute(*range(n), n, n + 2, n + 4, n + 1, n + 3)
    return x.reshape(*lead, C * PATCH * PATCH, H // PATCH, W // PATCH).contiguous()


def decode(z: torch.Tensor) -> torch.Tensor:
    *lead, Cz, h, w = z.shape
    if Cz % (PATCH * PATCH):
        raise ValueError(f"latent channels {Cz} not divisible by {PATCH * PATCH}")
    C = Cz // (PATCH * PATCH)
    n = len(lead)
    z = z.reshape(*lead, C, PATCH, PATCH, h, w)
    z = z.permute(*range(n), n, n + 3, n + 1, n + 4, n + 2)
    return z.reshape(*lead, C, h * PATCH, w * PATCH).contiguous()


def latent_channels(pixel_channels: int) -> int:
    return pixel_channels * PATCH * PATCH
