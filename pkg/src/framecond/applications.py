"""Sampling pipeline plus long-video and camera-motion applications."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch

from . import latent, rng
from .diffusion import GuidanceConfig, MixedNoiseSpec, NoiseSchedule, ddim_sample, sample_mixed_noise
from .frame_init import FrameInitParams, frame_init_mix, make_static_video
from .signals import ConditionSignal

CAMERA_FRAME_INIT = FrameInitParams(tau=750, d0=0.5)


class ChunkGenerationError(RuntimeError):
    def __init__(self, chunk: int, cause: BaseException):
        super().__init__(f"chunk {chunk} failed: {cause}")
        self.chunk = chunk


def initial_noise(shape, seed: int, noise_alpha: float = 1.5,
                  frame_init: FrameInitParams = FrameInitParams(),
                  layout: Optional[torch.Tensor] = None,
                  sched: Optional[NoiseSchedule] = None) -> torch.Tensor:
    """Mixed-prior noise, optionally passed through FrameInit with ``layout``."""
    eps = sample_mixed_noise(shape, MixedNoiseSpec(noise_alpha, seed), "init")
    if not frame_init.enabled:
        return eps
    if layout is None or sched is None:
        raise ValueError("FrameInit needs a layout video and a schedule")
    return frame_init_mix(layout.to(eps.dtype), eps, frame_init, sched)


def sample_video(model, z1: torch.Tensor, cond: ConditionSignal, cfg: GuidanceConfig, sched: NoiseSchedule,
                 num_frames: int, seed: int, noise_alpha: float = 1.5,
                 frame_init: FrameInitParams = FrameInitParams(),
                 layout: Optional[torch.Tensor] = None, first_frame: str = "clean") -> torch.Tensor:
    """Generate a latent video whose frame 1 is ``z1``.

    With FrameInit enabled the layout defaults to ``z1`` repeated ``num_frames`` times.
    """
    shape = (num_frames, *z1.shape)
    if frame_init.enabled and layout is None:
        layout = make_static_video(z1, num_frames)
    noise = initial_noise(shape, seed, noise_alpha, frame_init, layout, sched)
    return ddim_sample(model, noise, z1, cond, cfg, sched, first_frame=first_frame)


@dataclass(frozen=True)
class LongVideoPlan:
    chunk_count: int = 1
    frames_per_chunk: int = 16
    frame_init: FrameInitParams | Sequence[FrameInitParams] = FrameInitParams()

    def __post_init__(self):
        if self.chunk_count < 1:
            raise ValueError("chunk_count must be >= 1")
        if self.frames_per_chunk < 2:
            raise ValueError("frames_per_chunk must be >= 2 to advance the video")
        if not isinstance(self.frame_init, FrameInitParams) and len(self.frame_init) != self.chunk_count:
            raise ValueError("need one FrameInitParams per chunk")

    def chunk_params(self, i: int) -> FrameInitParams:
        return self.frame_init if isinstance(self.frame_init, FrameInitParams) else self.frame_init[i]

    @property
    def total_frames(self) -> int:
        return self.frames_per_chunk + (self.chunk_count - 1) * (self.frames_per_chunk - 1)


def autoregressive_generate(model, first_frame: torch.Tensor, plan: LongVideoPlan, cond: ConditionSignal,
                            cfg: GuidanceConfig, sched: NoiseSchedule, seed: int = 0,
                            noise_alpha: float = 1.5) -> torch.Tensor:
    """Chain chunks, each conditioned on the previous chunk's last latent frame.

    Chunk ``i`` draws its noise from ``split(seed, i)``; the repeated boundary
    frame is kept once.
    """
    pieces = []
    z1 = first_frame
    for i in range(plan.chunk_count):
        try:
            chunk = sample_video(model, z1, cond, cfg, sched, plan.frames_per_chunk, rng.split(seed, i),
                                 noise_alpha, plan.chunk_params(i))
        except Exception as exc:
            raise ChunkGenerationError(i, exc) from exc
        pieces.append(chunk if i == 0 else chunk[1:])
        z1 = chunk[-1]
    return torch.cat(pieces, dim=0)


@dataclass(frozen=True)
class CameraMotionSpec:
    """Synthetic camera path: per-frame crop scale and pixel offset.

    The crop side is ``scale * frame side`` with scale linear from
    ``zoom_start`` to ``zoom_end``. A pan starts at the side it moves away
    from and advances ``(pan_dx, pan_dy)`` pixels per frame; without a pan
    along an axis the crop stays centred on it.
    """

    kind: str = "pan"
    pan_dx: float = 0.0
    pan_dy: float = 0.0
    zoom_start: float = 1.0
    zoom_end: float = 1.0
    frames: int = 16

    def __post_init__(self):
        if self.kind not in ("pan", "zoom"):
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.zoom_start <= 0 or self.zoom_end <= 0:
            raise ValueError("zoom factors must be positive")
        if self.zoom_start > 1 or self.zoom_end > 1:
            raise ValueError("zoom factors above 1 would crop outside the frame")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")

    def scale(self, i: int) -> float:
        if self.frames == 1:
            return self.zoom_start
        a = i / (self.frames - 1)
        # this form is exact when zoom_start == zoom_end
        return self.zoom_start + (self.zoom_end - self.zoom_start) * a


def _axis_offset(i: int, step: float, size: float, crop: float) -> float:
    room = size - crop
    if step > 0:
        start = 0.0
    elif step < 0:
        start = room
    else:
        return room / 2
    return min(max(start + i * step, 0.0), room)


def crop_rectangles(spec: CameraMotionSpec, height: int, width: int) -> list[tuple[float, float, float, float]]:
    """``(x0, y0, crop_w, crop_h)`` for each frame, clamped inside the source frame."""
    rects = []
    for i in range(spec.frames):
        s = spec.scale(i)
        cw, ch = s * width, s * height
        if cw < 1 or ch < 1:
            raise ValueError(f"crop at frame {i} is smaller than one pixel")
        rects.append((_axis_offset(i, spec.pan_dx, width, cw), _axis_offset(i, spec.pan_dy, height, ch), cw, ch))
    return rects


def resample_crop(frame: torch.Tensor, x0: float, y0: float, cw: float, ch: float) -> torch.Tensor:
    """Bilinear resample of the crop back to the frame size; pixel centres at integer + 0.5."""
    C, H, W = frame.shape
    dtype = torch.float64
    xs = (x0 + (torch.arange(W, dtype=dtype) + 0.5) * (cw / W) - 0.5).clamp(0, W - 1)
    ys = (y0 + (torch.arange(H, dtype=dtype) + 0.5) * (ch / H) - 0.5).clamp(0, H - 1)
    x_lo = xs.floor().long()
    y_lo = ys.floor().long()
    x_hi = (x_lo + 1).clamp(max=W - 1)
    y_hi = (y_lo + 1).clamp(max=H - 1)
    fx = (xs - x_lo).to(frame.dtype)
    fy = (ys - y_lo).to(frame.dtype)[:, None]
    top = frame[:, y_lo][:, :, x_lo] * (1 - fx) + frame[:, y_lo][:, :, x_hi] * fx
    bot = frame[:, y_hi][:, :, x_lo] * (1 - fx) + frame[:, y_hi][:, :, x_hi] * fx
    return top * (1 - fy) + bot * fy


def synth_camera_motion(frame: torch.Tensor, spec: CameraMotionSpec) -> torch.Tensor:
    """Pixel video ``[N, C, H, W]`` that follows the crop path of ``spec`` over ``frame``."""
    _, H, W = frame.shape
    return torch.stack([resample_crop(frame, *rect) for rect in crop_rectangles(spec, H, W)])


def camera_guided_sample(model, frame: torch.Tensor, spec: CameraMotionSpec, cond: ConditionSignal,
                         cfg: GuidanceConfig, sched: NoiseSchedule, seed: int = 0, noise_alpha: float = 1.5,
                         frame_init: FrameInitParams = CAMERA_FRAME_INIT) -> torch.Tensor:
    """Sample with the encoded synthetic camera video as the FrameInit layout.

    ``frame`` is a pixel image ``[C, H, W]``; the result is a latent video.
    """
    layout = latent.encode(synth_camera_motion(frame, spec))
    z1 = latent.encode(frame)
    return sample_video(model, z1, cond, cfg, sched, spec.frames, seed, noise_alpha, frame_init, layout=layout)
