"""Epsilon-objective training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import rng
from .data import Corpus, TrainConfig, sample_batch
from .diffusion import NoiseSchedule, default_frame_mask, epsilon_loss
from .formats import save_model
from .unet import VideoUNet

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainResult:
    model: VideoUNet
    losses: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)


def ema_smooth(values, window: int = 200) -> np.ndarray:
    """Bias-corrected exponential moving average with span ``window``."""
    values = np.asarray(values, dtype=np.float64)
    a = 2.0 / (window + 1.0)
    out = np.empty_like(values)
    num = 0.0
    den = 0.0
    for i, v in enumerate(values):
        num = (1 - a) * num + v
        den = (1 - a) * den + 1.0
        out[i] = num / den
    return out


def batch_loss(model: VideoUNet, batch) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    pred = model(batch.z_t.to(dtype), batch.t, batch.labels, batch.intervals)
    mask = default_frame_mask(batch.z_t.shape[1])
    return epsilon_loss(pred, batch.eps.to(dtype), mask)


def train(model: VideoUNet, corpus: Corpus, cfg: TrainConfig, sched: NoiseSchedule,
          out_dir: Optional[Path] = None,
          on_step: Optional[Callable[[int, float], None]] = None) -> TrainResult:
    """Adam on the masked epsilon loss; frame 1 never enters the loss.

    When ``out_dir`` is given, ``loss.csv`` gets one ``step,loss`` row per step
    and ``ckpt_XXXXXX.fckpt`` files are written every ``cfg.checkpoint_every`` steps.
    """
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    result = TrainResult(model)
    trace = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_path = out_dir / "loss.csv"
        new = not trace_path.exists()
        trace = trace_path.open("a")
        if new:
            trace.write("step,loss\n")
    try:
        model.train()
        for step in range(1, cfg.steps + 1):
            batch = sample_batch(corpus, cfg, sched, rng.split(cfg.seed, "batch", step),
                                 null_label=model.config.null_label)
            loss = batch_loss(model, batch)
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            model.project_gammas()
            result.losses.append(value)
            if trace is not None:
                trace.write(f"{step},{value:.8g}\n")
                trace.flush()
            if out_dir is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                path = save_model(out_dir / f"ckpt_{step:06d}.fckpt", model, {"step": step})
                result.checkpoints.append(path)
            if on_step is not None:
                on_step(step, value)
            if step % 100 == 0:
                log.info("step %d loss %.4f", step, value)
    finally:
        if trace is not None:
            trace.close()
        model.eval()
    return result
