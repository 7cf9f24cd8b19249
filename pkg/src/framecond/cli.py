"""Command-line interface.

Subcommands: ``train``, ``sample``, ``long-video``, ``camera``, ``decompose``,
``metrics``. Values come from built-in defaults, then an optional flat
``--config`` file, then explicit flags. The resolved configuration is printed
as JSON before any work starts.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import latent
from .applications import CameraMotionSpec, LongVideoPlan, autoregressive_generate, camera_guided_sample, sample_video
from .data import CorpusSpec, TrainConfig, build_corpus, gen_clip, random_clip_spec
from .diffusion import GuidanceConfig, make_schedule
from .formats import decode_ppm, load_model, read_config, read_video, save_model, write_video
from .frame_init import FrameInitParams, band_split
from .metrics import compute_metrics
from .signals import ConditionSignal
from .training import train
from .unet import TemporalTransformer, UNetConfig, VideoUNet

SEED_ENV = "FRAMECOND_SEED"
SUBCOMMANDS = ("train", "sample", "long-video", "camera", "decompose", "metrics")


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "0"))


def _label(value: str):
    if value.lower() in ("none", "null", ""):
        return None
    return int(value)


def _add_schedule(p):
    p.add_argument("--schedule-steps", type=int, default=1000, help="diffusion steps T")
    p.add_argument("--beta-start", type=float, default=0.00085)
    p.add_argument("--beta-end", type=float, default=0.012)


def _add_sampling(p, tau: int, d0: float):
    p.add_argument("--checkpoint", required=True, help="model checkpoint to sample from")
    p.add_argument("--out", required=True, help="output frame-sequence directory")
    p.add_argument("--steps", type=int, default=50, help="DDIM steps")
    p.add_argument("--guidance-scale", type=float, default=7.5)
    p.add_argument("--noise-alpha", type=float, default=1.5, help="shared-noise strength")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--frameinit", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--tau", type=int, default=tau)
    p.add_argument("--d0", type=float, default=d0)
    p.add_argument("--window-size", type=int, default=3)
    p.add_argument("--label", type=_label, default=None, help="label id, or 'none' for unconditional")
    p.add_argument("--frame-interval", type=int, default=1)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--input", default=None, help="first frame: .ppm file or frame-sequence directory")
    p.add_argument("--first-frame-seed", type=int, default=0, help="synthetic first frame when --input is absent")
    p.add_argument("--first-frame-mode", choices=("clean", "renoise"), default="clean")
    p.add_argument("--fps", type=int, default=8)
    _add_schedule(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framecond", description="First-frame conditioned video diffusion")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("train", help="train a model on the moving-shapes corpus")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="run directory (loss.csv, checkpoints)")
    p.add_argument("--steps", type=int, default=2000, help="optimizer steps")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--label-drop-prob", type=float, default=0.1)
    p.add_argument("--noise-alpha", type=float, default=1.5)
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--checkpoint-every", type=int, default=500)
    p.add_argument("--corpus", default=None, help="corpus spec file (key = value)")
    p.add_argument("--window-size", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=32)
    p.add_argument("--embed-dim", type=int, default=128)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--spatial-conditioning", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--temporal-conditioning", action=argparse.BooleanOptionalAction, default=True)
    _add_schedule(p)

    for name, tau, d0, help_text in (
        ("sample", 850, 0.25, "sample one video"),
        ("long-video", 850, 0.25, "autoregressive long video"),
        ("camera", 750, 0.5, "camera-motion guided sampling"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None)
        _add_sampling(p, tau, d0)
        if name == "long-video":
            p.add_argument("--chunks", type=int, default=3)
        if name == "camera":
            p.add_argument("--kind", choices=("pan", "zoom"), default="pan")
            p.add_argument("--pan-dx", type=float, default=0.5)
            p.add_argument("--pan-dy", type=float, default=0.0)
            p.add_argument("--zoom-start", type=float, default=0.75)
            p.add_argument("--zoom-end", type=float, default=0.75)

    p = sub.add_parser("decompose", help="write low- and high-frequency bands of a video")
    p.add_argument("--config", default=None)
    p.add_argument("--input", required=True, help="frame-sequence directory")
    p.add_argument("--out", required=True)
    p.add_argument("--d0", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=_default_seed())

    p = sub.add_parser("metrics", help="temporal flicker and first-frame fidelity")
    p.add_argument("--config", default=None)
    p.add_argument("--input", required=True, help="frame-sequence directory")
    p.add_argument("--first-frame", default=None, help=".ppm conditioning frame (default: the video's frame 1)")
    p.add_argument("--seed", type=int, default=_default_seed())
    return parser


def _subparser(parser, command):
    for action in parser._subparsers._group_actions:
        if command in action.choices:
            return action.choices[command]
    raise KeyError(command)


def _apply_config_file(sub: argparse.ArgumentParser, path: str):
    values = read_config(path)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in actions or key == "config":
            raise SystemExit(f"unknown config key {key!r} in {path}")
        action = actions[key]
        if isinstance(action, argparse.BooleanOptionalAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            defaults[key] = action.type(raw)
        else:
            defaults[key] = raw
        action.required = False
    sub.set_defaults(**defaults)


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv):
    parser = build_parser()
    path = _config_path(argv)
    if path is not None and argv and argv[0] in SUBCOMMANDS:
        _apply_config_file(_subparser(parser, argv[0]), path)
    return parser.parse_args(argv)


def effective_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items())}


def _schedule(args):
    return make_schedule(args.schedule_steps, args.beta_start, args.beta_end)


def _first_frame(args) -> torch.Tensor:
    if args.input is None:
        clip, _ = gen_clip(random_clip_spec(args.first_frame_seed), 1)
        return clip[0]
    path = Path(args.input)
    if path.is_dir():
        video, _ = read_video(path)
        return torch.from_numpy(video[0])
    pixels = decode_ppm(path.read_bytes()).transpose(2, 0, 1).astype(np.float32) / 255.0
    return torch.from_numpy(pixels)


def _load_for_sampling(args):
    model, _ = load_model(args.checkpoint)
    model.eval()
    for m in model.modules():
        if isinstance(m, TemporalTransformer):
            m.window_size = args.window_size
    return model


def _write_outputs(args, video_latent, first_frame):
    pixels = latent.decode(video_latent).clamp(0, 1)
    write_video(args.out, pixels, fps=args.fps)
    report = compute_metrics(pixels, first_frame)
    (Path(args.out) / "metrics.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    print(json.dumps({"temporal_flicker": report.temporal_flicker,
                      "first_frame_fidelity": report.first_frame_fidelity}))


def cmd_train(args):
    corpus_spec = CorpusSpec.from_mapping(read_config(args.corpus)) if args.corpus else CorpusSpec()
    corpus = build_corpus(corpus_spec)
    cfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.learning_rate, steps=args.steps,
                      label_drop_prob=args.label_drop_prob, frames_per_clip=args.frames,
                      noise_alpha=args.noise_alpha, checkpoint_every=args.checkpoint_every, seed=args.seed)
    unet_cfg = UNetConfig(base_channels=args.base_channels, embed_dim=args.embed_dim, num_frames=args.frames,
                          latent_channels=latent.latent_channels(3), latent_size=corpus_spec.canvas // latent.PATCH,
                          window_size=args.window_size, spatial_conditioning=args.spatial_conditioning,
                          temporal_conditioning=args.temporal_conditioning)
    model = VideoUNet.build(unet_cfg, seed=args.seed)
    result = train(model, corpus, cfg, _schedule(args), out_dir=Path(args.out))
    save_model(Path(args.out) / "model.fckpt", model, {"steps": args.steps})
    print(json.dumps({"final_loss": result.losses[-1] if result.losses else None}))


def cmd_sample(args):
    model = _load_for_sampling(args)
    frame = _first_frame(args)
    cond = ConditionSignal(label_id=args.label, frame_interval=args.frame_interval)
    cfg = GuidanceConfig(args.guidance_scale, args.steps)
    fi = FrameInitParams(args.tau, args.d0, args.frameinit)
    out = sample_video(model, latent.encode(frame), cond, cfg, _schedule(args), args.frames, args.seed,
                       args.noise_alpha, fi, first_frame=args.first_frame_mode)
    _write_outputs(args, out, frame)


def cmd_long_video(args):
    model = _load_for_sampling(args)
    frame = _first_frame(args)
    cond = ConditionSignal(label_id=args.label, frame_interval=args.frame_interval)
    plan = LongVideoPlan(args.chunks, args.frames, FrameInitParams(args.tau, args.d0, args.frameinit))
    out = autoregressive_generate(model, latent.encode(frame), plan, cond,
                                  GuidanceConfig(args.guidance_scale, args.steps), _schedule(args),
                                  args.seed, args.noise_alpha)
    _write_outputs(args, out, frame)


def cmd_camera(args):
    model = _load_for_sampling(args)
    frame = _first_frame(args)
    cond = ConditionSignal(label_id=args.label, frame_interval=args.frame_interval)
    spec = CameraMotionSpec(args.kind, args.pan_dx, args.pan_dy, args.zoom_start, args.zoom_end, args.frames)
    out = camera_guided_sample(model, frame, spec, cond, GuidanceConfig(args.guidance_scale, args.steps),
                               _schedule(args), args.seed, args.noise_alpha,
                               FrameInitParams(args.tau, args.d0, args.frameinit))
    _write_outputs(args, out, frame)


def cmd_decompose(args):
    video, manifest = read_video(args.input)
    z = latent.encode(torch.from_numpy(video).double())
    low, high = band_split(z, args.d0)
    out = Path(args.out)
    write_video(out / "low", latent.decode(low), fps=manifest.get("fps", 8))
    write_video(out / "high", latent.decode(high), fps=manifest.get("fps", 8), value_range=(-1.0, 1.0))
    print(json.dumps({"low": str(out / "low"), "high": str(out / "high")}))


def cmd_metrics(args):
    video, _ = read_video(args.input)
    if args.first_frame:
        ref = decode_ppm(Path(args.first_frame).read_bytes()).transpose(2, 0, 1) / 255.0
    else:
        ref = video[0]
    print(json.dumps(compute_metrics(video, ref).as_dict()))


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "long-video": cmd_long_video,
    "camera": cmd_camera,
    "decompose": cmd_decompose,
    "metrics": cmd_metrics,
}


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    print(json.dumps({"effective_config": effective_config(args)}, default=str))
    sys.stdout.flush()
    COMMANDS[args.command](args)
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
