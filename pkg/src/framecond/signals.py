from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import torch


@dataclass(frozen=True)
class ConditionSignal:
    """What the denoiser is conditioned on besides the noisy latent.

    ``label_id=None`` selects the null (unconditional) embedding row used by
    classifier-free guidance.
    """

    first_frame_latent: Optional[torch.Tensor] = None
    label_id: Optional[int] = None
    frame_interval: int = 1
    timestep: Optional[int] = None

    def __post_init__(self):
        if self.first_frame_latent is not None and not isinstance(self.first_frame_latent, torch.Tensor):
            raise TypeError("first_frame_latent must be a tensor or None (pass labels as label_id=...)")
        if not 1 <= int(self.frame_interval):
            raise ValueError(f"frame_interval must be >= 1, got {self.frame_interval}")

    def null(self) -> "ConditionSignal":
        return replace(self, label_id=None)

    def at(self, t: int) -> "ConditionSignal":
        return replace(self, timestep=int(t))
