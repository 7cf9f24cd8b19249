"""Poke at the two first-frame attention paths with random weights.

Run:  python demos/attention_mechanics.py
"""
import torch

from framecond.attention import (
    AttentionWeights,
    build_first_frame_window,
    frames_to_rows,
    self_attention,
    spatial_cross_frame_attention,
    temporal_window_attention,
)

g = torch.Generator().manual_seed(0)
C, H, W, N = 8, 4, 4, 6
w = AttentionWeights.random(C, 16, head_count=2, generator=g, dtype=torch.float64)

# %% spatial: each frame attends over its own tokens and the first frame's
z = torch.randn(N, H * W, C, generator=g, dtype=torch.float64)
out, probs = spatial_cross_frame_attention(z[3], z[0], w, return_probs=True)
print("keys per query", probs.shape[-1], "(own", H * W, "+ first frame", H * W, ")")
print("mass on first-frame keys %.3f" % float(probs[..., H * W:].sum(-1).mean()))

# frame 1 attending to itself twice is plain self-attention: every key appears
# twice, which scales all softmax terms equally
dup = spatial_cross_frame_attention(z[0], z[0], w)
print("duplicate-key vs self-attention max gap %.1e" % float((dup - self_attention(z[0], w)).abs().max()))

# %% temporal: every spatial row also sees a 3x3 patch of the first frame
z1 = torch.randn(C, H, W, generator=g, dtype=torch.float64)
video = torch.randn(N, C, H, W, generator=g, dtype=torch.float64)
video[0] = z1
window = build_first_frame_window(z1, 3)
print("window tokens per row", window.tokens.shape[-2])

# corner position (0, 0): neighbours outside the frame repeat the edge
corner = window.tokens[0]  # [8, C]
print("corner window uses z1[:, 0, 0] this many times:",
      int((corner == z1[:, 0, 0]).all(-1).sum()))

rows = frames_to_rows(video[None])  # [H*W, N, C]
out, probs = temporal_window_attention(rows, window, w, return_probs=True)
print("temporal output", tuple(out.shape), "share on window tokens %.3f" % float(probs[..., N:].sum(-1).mean()))
