"""Split a moving-shapes clip into low and high spatio-temporal frequency bands.

Run:  python demos/frequency_bands.py --d0 0.25 --out /tmp/bands
"""
import argparse

import numpy as np
import torch

from framecond import latent, rng
from framecond.data import gen_clip, random_clip_spec
from framecond.formats import write_video
from framecond.frame_init import band_split, gaussian_low_pass, make_static_video

parser = argparse.ArgumentParser()
parser.add_argument("--d0", type=float, default=0.25)
parser.add_argument("--frames", type=int, default=16)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default=None, help="optional directory for the two bands as frame sequences")
args = parser.parse_args()

clip, label = gen_clip(random_clip_spec(rng.split(args.seed, "demo")), args.frames)
z = latent.encode(clip.double())
print("clip", tuple(clip.shape), "label", label, "latent", tuple(z.shape))

# %% the mask itself: 1 at DC, falling off with normalised frequency radius
mask = gaussian_low_pass(z.shape[-4:-3] + z.shape[-2:], args.d0)
centre = tuple(s // 2 for s in mask.values.shape)
print("mask at DC", mask.values[centre], "min", mask.values.min().round(4))

# %% bands add back to the input
low, high = band_split(z, args.d0)
print("max |low + high - z|", float((low + high - z).abs().max()))

# energy split; the high band holds edges and motion
e = z.pow(2).sum()
print("energy fraction low %.3f  high %.3f" % (float(low.pow(2).sum() / e), float(high.pow(2).sum() / e)))

# %% a static clip has no temporal frequencies, so its low band is static too
static = make_static_video(z[0], args.frames)
s_low, _ = band_split(static, args.d0)
drift = (s_low - s_low[:1]).abs().max()
print("static clip: low band frame-to-frame drift", float(drift))

# %% the moving clip's low band still moves, but blurred; track the bright mass
weights = latent.decode(low).clamp(0, 1).mean(1)  # [N, H, W]
xs = torch.arange(weights.shape[-1], dtype=weights.dtype)
cx = (weights.sum(-2) * xs).sum(-1) / weights.sum((-2, -1))
print("low-band x centroid per frame", np.round(cx.numpy(), 2))

if args.out:
    write_video(f"{args.out}/low", latent.decode(low))
    write_video(f"{args.out}/high", latent.decode(high), value_range=(-1.0, 1.0))
    print("wrote", args.out)
