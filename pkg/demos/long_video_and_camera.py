"""Long videos by chaining chunks, and camera pans steered through the noise layout.

Needs a checkpoint, e.g. from demos/train_and_sample.py.

Run:  python demos/long_video_and_camera.py --checkpoint /tmp/run/model.fckpt --out /tmp/apps
"""
import argparse
from pathlib import Path

import torch

from framecond import latent, rng
from framecond.applications import (
    CameraMotionSpec,
    LongVideoPlan,
    autoregressive_generate,
    camera_guided_sample,
    crop_rectangles,
    synth_camera_motion,
)
from framecond.data import gen_clip, random_clip_spec
from framecond.diffusion import GuidanceConfig, make_schedule
from framecond.formats import load_model, write_video
from framecond.metrics import compute_metrics
from framecond.signals import ConditionSignal

parser = argparse.ArgumentParser()
parser.add_argument("--checkpoint", required=True)
parser.add_argument("--out", default="demo_apps")
parser.add_argument("--chunks", type=int, default=3)
parser.add_argument("--sample-steps", type=int, default=20)
args = parser.parse_args()
out = Path(args.out)

model, _ = load_model(args.checkpoint)
model.eval()
sched = make_schedule()
cfg = GuidanceConfig(7.5, args.sample_steps)

clip, label = gen_clip(random_clip_spec(rng.split(0, "held_out")), 1)
frame = clip[0]

# %% long video: each chunk starts from the previous chunk's last frame
plan = LongVideoPlan(args.chunks, 16)
z = autoregressive_generate(model, latent.encode(frame), plan, ConditionSignal(label_id=label), cfg, sched, seed=1)
video = latent.decode(z).clamp(0, 1)
print("long video", video.shape[0], "frames (planned", plan.total_frames, ")")
report = compute_metrics(video, frame)
# flicker per chunk, to see whether quality decays along the chain
per_chunk = [sum(report.flicker_series[i * 15:(i + 1) * 15]) / 15 for i in range(args.chunks)]
print("flicker per chunk", [round(f, 4) for f in per_chunk])
write_video(out / "long", video)

# %% camera pan: the layout is a sliding crop of the first frame
spec = CameraMotionSpec("pan", pan_dx=0.5, zoom_start=0.75, zoom_end=0.75, frames=16)
print("crop x offsets", [r[0] for r in crop_rectangles(spec, *frame.shape[1:])][:6], "...")
write_video(out / "pan_layout", synth_camera_motion(frame, spec).clamp(0, 1))
z = camera_guided_sample(model, frame, spec, ConditionSignal(label_id=label), cfg, sched, seed=2)
pan = latent.decode(z).clamp(0, 1)
print("frame 1 kept exactly:", torch.equal(pan[0], frame))
write_video(out / "pan", pan)
print("wrote", out)
