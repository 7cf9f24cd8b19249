"""Train a small model on synthetic moving shapes, then sample with and without FrameInit.

The full desk run is 2000 steps (about ten minutes on one CPU core). The
default here is shorter; pass --steps 2000 for the real thing.

Run:  python demos/train_and_sample.py --steps 300 --out /tmp/run
"""
import argparse
import time
from pathlib import Path

import numpy as np

from framecond import latent, rng
from framecond.applications import sample_video
from framecond.data import CorpusSpec, TrainConfig, build_corpus, gen_clip, random_clip_spec
from framecond.diffusion import GuidanceConfig, make_schedule
from framecond.formats import save_model, write_video
from framecond.frame_init import FrameInitParams
from framecond.metrics import temporal_flicker
from framecond.signals import ConditionSignal
from framecond.training import ema_smooth, train
from framecond.unet import UNetConfig, VideoUNet

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=300)
parser.add_argument("--seeds", type=int, default=4)
parser.add_argument("--sample-steps", type=int, default=25)
parser.add_argument("--out", default="demo_run")
args = parser.parse_args()
out = Path(args.out)

sched = make_schedule()
corpus = build_corpus(CorpusSpec())
model = VideoUNet.build(UNetConfig(), seed=0)
print("parameters", sum(p.numel() for p in model.parameters()))

t0 = time.time()
result = train(model, corpus, TrainConfig(steps=args.steps), sched, out_dir=out,
               on_step=lambda s, l: s % 50 == 0 and print(f"step {s:5d}  loss {l:.4f}"))
print("trained in %.0f s" % (time.time() - t0))
smooth = ema_smooth(result.losses)
print("smoothed loss: step 10 %.3f -> final %.3f" % (smooth[min(9, len(smooth) - 1)], smooth[-1]))
save_model(out / "model.fckpt", model, {"steps": args.steps})

# gamma starts at 1 (temporal layers are identity-like); see where training moved it
print("gammas", [round(m.gamma.item(), 3) for m in model.gamma_mixers()])

# %% sample from first frames the corpus never produced
model.eval()
cfg = GuidanceConfig(7.5, args.sample_steps)
flicker = {True: [], False: []}
for s in range(args.seeds):
    clip, label = gen_clip(random_clip_spec(rng.split(s, "held_out")), 1)
    z1 = latent.encode(clip[0])
    for on in (True, False):
        z = sample_video(model, z1, ConditionSignal(label_id=label, frame_interval=2), cfg, sched, 16, s,
                         frame_init=FrameInitParams(enabled=on))
        video = latent.decode(z).clamp(0, 1)
        flicker[on].append(temporal_flicker(video))
        if s == 0:
            write_video(out / ("sample_fi" if on else "sample_plain"), video)

print("mean flicker  FrameInit %.4f  plain %.4f" % (np.mean(flicker[True]), np.mean(flicker[False])))
print("videos in", out)
