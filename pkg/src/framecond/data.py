"""Moving-shapes video corpus and training-batch assembly.

Each clip shows one square or circle sliding in a fixed direction over a flat
background. The (shape, direction) pair is the clip's discrete label, which
plays the role of a text prompt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import latent, rng
from .diffusion import MixedNoiseSpec, NoiseSchedule, add_noise_batch, sample_mixed_noise
from .unet import inject_first_frame

SHAPES = ("square", "circle")
DIRECTIONS = ("left", "right", "up", "down", "diag")
DIRECTION_VECTORS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "up": (0.0, -1.0),
    "down": (0.0, 1.0),
    "diag": (1.0, 1.0),
}
NUM_LABELS = len(SHAPES) * len(DIRECTIONS)


def label_id(shape_kind: str, direction: str) -> int:
    return SHAPES.index(shape_kind) * len(DIRECTIONS) + DIRECTIONS.index(direction)


def label_name(label: int) -> tuple[str, str]:
    return SHAPES[label // len(DIRECTIONS)], DIRECTIONS[label % len(DIRECTIONS)]


@dataclass(frozen=True)
class ClipSpec:
    shape_kind: str = "square"
    color: tuple = (1.0, 0.2, 0.2)
    direction: str = "right"
    speed: float = 0.5
    background: tuple = (0.1, 0.1, 0.1)
    size: int = 5
    start: tuple = (2.0, 2.0)  # (x, y) of the top-left corner
    canvas: int = 16

    def __post_init__(self):
        if self.shape_kind not in SHAPES:
            raise ValueError(f"unknown shape {self.shape_kind!r}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        if self.size > self.canvas:
            raise ValueError(f"shape size {self.size} exceeds canvas {self.canvas}")

    @property
    def label_id(self) -> int:
        return label_id(self.shape_kind, self.direction)

    def position(self, i: int) -> tuple[float, float]:
        dx, dy = DIRECTION_VECTORS[self.direction]
        hi = self.canvas - self.size
        x = min(max(self.start[0] + i * self.speed * dx, 0.0), hi)
        y = min(max(self.start[1] + i * self.speed * dy, 0.0), hi)
        return x, y


def random_clip_spec(seed: int, canvas: int = 16, speeds=(0.25, 0.5), size_range=(4, 6),
                     shapes=SHAPES, directions=DIRECTIONS) -> ClipSpec:
    g = rng.stream(seed, "clip_spec")
    size = int(g.integers(size_range[0], size_range[1] + 1))
    color = tuple(float(c) for c in g.uniform(0.5, 1.0, 3))
    background = tuple(float(c) for c in g.uniform(0.0, 0.3, 3))
    start = tuple(float(s) for s in g.integers(0, canvas - size + 1, 2))
    return ClipSpec(
        shape_kind=str(g.choice(list(shapes))),
        color=color,
        direction=str(g.choice(list(directions))),
        speed=float(g.choice(list(speeds))),
        background=background,
        size=size,
        start=start,
        canvas=canvas,
    )


def _coverage(spec: ClipSpec, x: float, y: float) -> np.ndarray:
    c = np.arange(spec.canvas) + 0.5
    px, py = c[None, :], c[:, None]
    if spec.shape_kind == "square":
        return (px >= x) & (px < x + spec.size) & (py >= y) & (py < y + spec.size)
    r = spec.size / 2
    return (px - (x + r)) ** 2 + (py - (y + r)) ** 2 <= r * r


def gen_clip(spec: Optional[ClipSpec], length: int, seed: int = 0) -> tuple[torch.Tensor, int]:
    """Render ``length`` frames ``[L, 3, H, W]`` in ``[0, 1]``.

    With ``spec=None`` a random spec is drawn from ``seed``; rendering itself
    has no randomness.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    if spec is None:
        spec = random_clip_spec(seed)
    frames = np.empty((length, 3, spec.canvas, spec.canvas), dtype=np.float32)
    bg = np.asarray(spec.background, dtype=np.float32)[:, None, None]
    fg = np.asarray(spec.color, dtype=np.float32)[:, None, None]
    for i in range(length):
        mask = _coverage(spec, *spec.position(i))[None]
        frames[i] = np.where(mask, fg, bg)
    return torch.from_numpy(frames), spec.label_id


@dataclass
class CorpusSpec:
    """Corpus recipe, readable from a flat ``key = value`` file."""

    num_clips: int = 256
    clip_length: int = 76
    canvas: int = 16
    speeds: tuple = (0.25, 0.5)
    size_min: int = 4
    size_max: int = 6
    shapes: tuple = SHAPES
    directions: tuple = DIRECTIONS
    seed: int = 0

    @classmethod
    def from_mapping(cls, values: dict) -> "CorpusSpec":
        spec = cls()
        for key, raw in values.items():
            if not hasattr(spec, key):
                raise KeyError(f"unknown corpus key {key!r}")
            current = getattr(spec, key)
            if isinstance(current, tuple):
                items = [v.strip() for v in str(raw).split(",") if v.strip()]
                caster = float if key == "speeds" else str
                setattr(spec, key, tuple(caster(v) for v in items))
            else:
                setattr(spec, key, type(current)(raw))
        return spec


@dataclass
class Corpus:
    clips: torch.Tensor  # [M, L, 3, H, W]
    labels: torch.Tensor  # [M]
    specs: list = field(default_factory=list)

    def __len__(self):
        return self.clips.shape[0]


def build_corpus(spec: CorpusSpec = CorpusSpec()) -> Corpus:
    specs = [
        random_clip_spec(rng.split(spec.seed, "clip", i), spec.canvas, spec.speeds,
                         (spec.size_min, spec.size_max), spec.shapes, spec.directions)
        for i in range(spec.num_clips)
    ]
    rendered = [gen_clip(s, spec.clip_length) for s in specs]
    clips = torch.stack([c for c, _ in rendered])
    labels = torch.tensor([lab for _, lab in rendered], dtype=torch.long)
    return Corpus(clips, labels, specs)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    steps: int = 2000
    label_drop_prob: float = 0.1
    frames_per_clip: int = 16
    frame_interval_range: tuple = (1, 5)
    noise_alpha: float = 1.5
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.label_drop_prob <= 1.0:
            raise ValueError("label_drop_prob must lie in [0, 1]")
        lo, hi = self.frame_interval_range
        if not 1 <= lo <= hi:
            raise ValueError("frame_interval_range must satisfy 1 <= lo <= hi")


# Cluster-scale reference values; documented, not used by the desk run.
REFERENCE_TRAIN_CONFIG = TrainConfig(batch_size=192, learning_rate=5e-5, steps=170_000)


@dataclass
class Batch:
    z_t: torch.Tensor  # [B, N, C', h, w], frame 1 clean
    eps: torch.Tensor
    z0: torch.Tensor
    t: torch.Tensor  # [B]
    labels: torch.Tensor  # [B], null_label where dropped
    intervals: torch.Tensor  # [B]
    frame_indices: torch.Tensor  # [B, N]
    clip_ids: torch.Tensor  # [B]
    dropped: torch.Tensor  # [B] bool


def strided_indices(start: int, interval: int, frames: int) -> np.ndarray:
    return start + interval * np.arange(frames)


def sample_batch(corpus: Corpus, cfg: TrainConfig, sched: NoiseSchedule, seed: int,
                 null_label: int = NUM_LABELS) -> Batch:
    B, N = cfg.batch_size, cfg.frames_per_clip
    lo, hi = cfg.frame_interval_range
    L = corpus.clips.shape[1]
    if (N - 1) * hi + 1 > L:
        raise ValueError(f"clips of length {L} cannot supply {N} frames at interval {hi}")
    g = rng.stream(seed, "batch")
    clip_ids = g.integers(0, len(corpus), B)
    intervals = g.integers(lo, hi + 1, B)
    starts = np.array([g.integers(0, L - (N - 1) * v) for v in intervals])
    t = g.integers(1, sched.T + 1, B)
    dropped = g.random(B) < cfg.label_drop_prob

    idx = np.stack([strided_indices(s, v, N) for s, v in zip(starts, intervals)])
    pixels = corpus.clips[torch.from_numpy(clip_ids)[:, None], torch.from_numpy(idx)]  # [B, N, 3, H, W]
    z0 = latent.encode(pixels)
    eps = sample_mixed_noise(z0.shape, MixedNoiseSpec(cfg.noise_alpha, seed), "eps")
    t = torch.from_numpy(t)
    z_t = inject_first_frame(add_noise_batch(z0, eps, t, sched), z0[:, 0])
    labels = corpus.labels[torch.from_numpy(clip_ids)].clone()
    dropped = torch.from_numpy(dropped)
    labels[dropped] = null_label
    return Batch(z_t, eps, z0, t, labels, torch.from_numpy(intervals), torch.from_numpy(idx),
                 torch.from_numpy(clip_ids), dropped)
