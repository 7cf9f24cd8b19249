"""Noise schedule, forward process, epsilon loss and DDIM sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from . import rng
from .signals import ConditionSignal

EpsFn = Callable[[torch.Tensor, int, ConditionSignal], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at 1-based step ``t``; ``t=0`` means clean data."""
        if t == 0:
            return 1.0
        check_timestep(t, self)
        return float(self.alpha_bars[t - 1])

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or len(betas) < 1:
            raise ValueError("betas must be a non-empty 1-D sequence")
        if np.any(betas <= 0) or np.any(betas >= 1):
            raise ValueError("every beta must lie in (0, 1)")
        betas = betas.copy()
        betas.setflags(write=False)
        alpha_bars = np.cumprod(1.0 - betas)
        alpha_bars.setflags(write=False)
        return cls(betas=betas, alpha_bars=alpha_bars)


def make_schedule(T: int = 1000, beta_start: float = 0.00085, beta_end: float = 0.012) -> NoiseSchedule:
    """Linear beta schedule over ``T`` steps."""
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, int(T), dtype=np.float64))


def check_timestep(t: int, sched: NoiseSchedule) -> None:
    if int(t) != t or not 1 <= t <= sched.T:
        raise ValueError(f"timestep {t} outside [1, {sched.T}]")


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: int, sched: NoiseSchedule) -> torch.Tensor:
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(eps.shape)}")
    check_timestep(t, sched)
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def add_noise_batch(z0: torch.Tensor, eps: torch.Tensor, t: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """``add_noise`` with one timestep per leading batch element."""
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {tuple(z0.shape)} vs {tuple(eps.shape)}")
    t = torch.as_tensor(t, dtype=torch.long)
    if t.min() < 1 or t.max() > sched.T:
        raise ValueError("timestep out of range")
    ab = torch.tensor(sched.alpha_bars, dtype=z0.dtype)[t - 1]
    ab = ab.view(-1, *([1] * (z0.dim() - 1)))
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps


@dataclass(frozen=True)
class MixedNoiseSpec:
    """Shared-plus-independent per-frame noise; ``alpha`` sets the shared strength."""

    alpha: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")

    @property
    def shared_variance(self) -> float:
        return self.alpha**2 / (1.0 + self.alpha**2)

    @property
    def independent_variance(self) -> float:
        return 1.0 / (1.0 + self.alpha**2)


def sample_mixed_noise(shape, spec: MixedNoiseSpec, *names: str | int, dtype=torch.float32) -> torch.Tensor:
    """Noise whose frames (axis -4) share one component.

    ``shape`` is ``[N, C, H, W]`` or ``[B, N, C, H, W]``. Extra ``names`` select
    a sub-stream of ``spec.seed``.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) not in (4, 5) or any(s < 1 for s in shape):
        raise ValueError(f"expected [N,C,H,W] or [B,N,C,H,W], got {shape}")
    shared_shape = shape[:-4] + (1,) + shape[-3:]
    shared = rng.stream(spec.seed, *names, "shared").standard_normal(shared_shape)
    ind = rng.stream(spec.seed, *names, "independent").standard_normal(shape)
    eps = math.sqrt(spec.shared_variance) * shared + math.sqrt(spec.independent_variance) * ind
    return torch.from_numpy(eps).to(dtype)


def default_frame_mask(n_frames: int) -> torch.Tensor:
    mask = torch.ones(n_frames, dtype=torch.bool)
    mask[0] = False
    return mask


def epsilon_loss(pred: torch.Tensor, target: torch.Tensor, frame_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean squared error over the frames selected by ``frame_mask`` (axis -4)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    n = pred.shape[-4]
    if frame_mask is None:
        frame_mask = default_frame_mask(n)
    frame_mask = torch.as_tensor(frame_mask, dtype=torch.bool)
    if frame_mask.shape != (n,):
        raise ValueError(f"frame_mask must have length {n}")
    if not frame_mask.any():
        raise ValueError("frame_mask selects no frames")
    diff = (pred - target)[..., frame_mask, :, :, :]
    return diff.pow(2).mean()


@dataclass(frozen=True)
class GuidanceConfig:
    scale_w: float = 7.5
    num_steps: int = 50
    eta: float = 0.0

    def __post_init__(self):
        if self.scale_w < 0:
            raise ValueError("guidance scale must be >= 0")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.eta != 0:
            raise ValueError("only deterministic DDIM (eta=0) is supported")


def as_eps_fn(model) -> EpsFn:
    return model.denoise if hasattr(model, "denoise") else model


def cfg_predict(model, z_t: torch.Tensor, t: int, cond: ConditionSignal, cfg: GuidanceConfig) -> torch.Tensor:
    """Classifier-free guided epsilon: ``null + w * (cond - null)``."""
    eps_fn = as_eps_fn(model)
    w = cfg.scale_w
    if w == 1:
        return eps_fn(z_t, t, cond)
    eps_null = eps_fn(z_t, t, cond.null())
    if w == 0:
        return eps_null
    eps_cond = eps_fn(z_t, t, cond)
    return eps_null + w * (eps_cond - eps_null)


def ddim_timesteps(T: int, num_steps: int) -> list[int]:
    """Descending, evenly spaced 1-based timesteps ending at ``T``."""
    if num_steps > T:
        raise ValueError(f"num_steps={num_steps} exceeds T={T}")
    k = np.arange(1, num_steps + 1, dtype=np.float64)
    ts = np.floor(k * T / num_steps + 0.5).astype(int)
    return [int(t) for t in ts[::-1]]


@torch.no_grad()
def ddim_sample(
    model,
    init_noise: torch.Tensor,
    z1: torch.Tensor,
    cond: ConditionSignal,
    cfg: GuidanceConfig,
    sched: NoiseSchedule,
    first_frame: str = "clean",
    callback: Optional[Callable[[int, int, torch.Tensor], None]] = None,
) -> torch.Tensor:
    """Deterministic DDIM from ``init_noise`` ``[N, C, H, W]`` with frame 1 pinned.

    ``first_frame="clean"`` feeds the clean ``z1`` as frame 1 at every step.
    ``"renoise"`` feeds ``z1`` noised to the current step level with the frame-1
    slice of ``init_noise`` instead. Either way frame 1 is never updated by the
    sampler and the output frame 1 equals ``z1`` exactly.

    ``callback(step_index, t, z)`` sees the state after every update.
    """
    if init_noise.dim() != 4 or init_noise.shape[1:] != z1.shape:
        raise ValueError(f"init_noise {tuple(init_noise.shape)} does not match z1 {tuple(z1.shape)}")
    if first_frame not in ("clean", "renoise"):
        raise ValueError(f"unknown first_frame mode {first_frame!r}")
    timesteps = ddim_timesteps(sched.T, cfg.num_steps)
    z = init_noise.clone()
    z[0] = z1
    for i, t in enumerate(timesteps):
        ab = sched.alpha_bar(t)
        ab_prev = sched.alpha_bar(timesteps[i + 1]) if i + 1 < len(timesteps) else 1.0
        model_in = z
        if first_frame == "renoise":
            model_in = z.clone()
            model_in[0] = math.sqrt(ab) * z1 + math.sqrt(1.0 - ab) * init_noise[0]
        eps = cfg_predict(model, model_in, t, cond.at(t), cfg)
        x0 = (model_in - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
        z_next = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps
        z = torch.cat([z1.unsqueeze(0), z_next[1:]], dim=0)
        if callback is not None:
            callback(i, t, z)
    return z
